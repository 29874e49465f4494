"""Per-trial scenario synthesis. Every draw comes from ``default_rng(seed)``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import gps_timestamp as gt
from .. import networked as net
from ..signal_model import OfdmGrid, Path, clock_trace, synthesize_csi


@dataclass
class Trial:
    kind: str
    seed: int
    truth: dict
    csi: object = None
    data: dict = field(default_factory=dict)


def _grid(cfg) -> OfdmGrid:
    return OfdmGrid(**cfg["grid"])


def _trace(cfg, grid, T, rng):
    c = cfg["clock"]
    return clock_trace(T, grid, rng, cfo_walk_scale=c["cfo_walk_scale"], stability_ppm=c["stability_ppm"],
                       max_tmo=c["max_tmo"], phase_mode=c["phase_mode"])


def _signed_uniform(rng, lo_hi):
    lo, hi = lo_hi
    mag = rng.uniform(lo, hi) if hi > lo else lo
    return float(rng.choice([-1.0, 1.0]) * mag) if lo >= 0 and hi > 0 else float(mag)


def _los_dynamic(cfg, rng, seed) -> Trial:
    s = cfg["scenario"]
    g = _grid(cfg)
    T = s["num_blocks"]
    amp = 10 ** (s["dynamic_power_db"] / 20)
    los = Path(s["los_delay"], 0.0, np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(*s["los_aoa"]), is_los=True)
    dyn = Path(s["dynamic_delay"], s["doppler"], amp * np.exp(2j * np.pi * rng.random()),
               aoa=rng.uniform(*s["dynamic_aoa"]))
    csi = synthesize_csi([los, dyn], g, _trace(cfg, g, T, rng), snr_db=s["snr_db"], rng=rng)
    return Trial("los_dynamic", seed, {"delay": s["dynamic_delay"] - s["los_delay"], "doppler": s["doppler"]}, csi)


def _walker(cfg, rng, seed) -> Trial:
    s = cfg["scenario"]
    g = _grid(cfg)
    T = s["num_blocks"]
    t = np.arange(T) * g.block_period
    track = s["sweep_amplitude"] * np.sin(2 * np.pi * t / s["sweep_period"])
    amp = 10 ** (s["dynamic_power_db"] / 20)
    los = Path(s["los_delay"], 0.0, np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(*s["los_aoa"]), is_los=True)
    dyn = Path(s["dynamic_delay"], 0.0, amp * np.exp(2j * np.pi * rng.random()),
               aoa=_signed_uniform(rng, s["dynamic_aoa"]), doppler_track=track)
    csi = synthesize_csi([los, dyn], g, _trace(cfg, g, T, rng), snr_db=s["snr_db"], rng=rng)
    return Trial("walker", seed, {"track": track}, csi)


def _sync(cfg, rng, seed) -> Trial:
    s = cfg["scenario"]
    model = gt.CounterModel(s["counter_rate"], s["skew_ppm"], s["pps_sigma"], s["counter_jitter"],
                            offset_ticks=float(rng.integers(0, 2 ** 31)))
    recs = gt.simulate_pps(model, s["records"], rng)
    t_mid = 0.5 * (s["records"] - 1)
    return Trial("sync", seed, {"time": t_mid}, data={"records": recs, "model": model,
                                                      "counter": float(model.ticks(t_mid))})


def _network(cfg, rng, seed) -> Trial:
    s = cfg["scenario"]
    rrus = net.RruSet(np.array(s["rru_positions"], float))
    (x0, x1), (y0, y1) = s["target_box"]
    x = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
    frame = net.simulate_toas(rrus, s["tx_position"], np.tile(x, (s["slots"], 1)), rng,
                              toa_sigma=s["toa_sigma"], walk_sigma=s["walk_sigma"])
    init = x + rng.normal(0.0, s["init_error"], 2) if s["init_error"] > 0 else x.copy()
    return Trial("network", seed, {"position": x}, data={"frame": frame, "rrus": rrus, "init": init,
                                                          "tx": np.array(s["tx_position"], float)})


_BUILDERS = {"los_dynamic": _los_dynamic, "walker": _walker, "sync": _sync, "network": _network}


def build_trial(cfg: dict, seed: int) -> Trial:
    rng = np.random.default_rng(seed)
    return _BUILDERS[cfg["scenario"]["type"]](cfg, rng, seed)
