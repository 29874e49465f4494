"""Method registry. Each method maps a trial to one result row."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import cacc, casr
from .. import gps_timestamp as gt
from .. import networked as net
from ..estimators import peak_extract


@dataclass(frozen=True)
class MethodSpec:
    name: str
    scenarios: tuple
    params: dict
    fn: Callable
    sync_method: str | None = None


def _row(estimate=np.nan, truth=np.nan, spread=np.nan, image_ratio=np.nan, detail=""):
    return {"estimate": float(estimate), "truth": float(truth), "error": float(estimate - truth),
            "spread": float(spread), "image_ratio": float(image_ratio), "detail": detail}


def _grids(p, grid):
    d = np.linspace(-p["delay_span"], p["delay_span"], p["delay_points"])
    f = np.linspace(-p["doppler_span"], p["doppler_span"], p["doppler_points"])
    return d, f


def _periodogram_method(tensor_fn):
    def run(trial, p):
        x = cacc.static_filter(tensor_fn(trial.csi, p), tuple(p["passband"]), p["taps"])
        spec = cacc.relative_spectrum(x, zero_pad=p["zero_pad"])
        top = peak_extract(spec, max_peaks=1, rel_threshold=1.0)[0]
        tr = trial.truth
        return _row(top.doppler, tr["doppler"], image_ratio=cacc.image_to_true_ratio(spec, tr["delay"], tr["doppler"]),
                    detail=f"delay={top.delay!r}")
    return run


def _plain(csi, p):
    return cacc.cross_correlate(csi)


def _add_minus(csi, p):
    return cacc.add_minus(csi, alpha_scale=p["alpha_scale"], beta_scale=p["beta_scale"])


def _mirrored(trial, p):
    x = cacc.static_filter(cacc.cross_correlate(trial.csi), tuple(p["passband"]), p["taps"])
    d, f = _grids(p, x.grid)
    res = cacc.mirrored_music_full(x, p["L"], d, f, window=tuple(p["window"]), sign_rule=p["sign_rule"])
    tr = trial.truth
    ratio = cacc.image_to_true_ratio(res.spectrum, tr["delay"], tr["doppler"])
    if not res.peaks:
        raise RuntimeError("no path detected")
    top = res.peaks[0]
    return _row(top.doppler, tr["doppler"], image_ratio=ratio, detail=f"delay={top.delay!r}")


def _dfs(trial, p):
    f = np.linspace(-p["doppler_span"], p["doppler_span"], p["doppler_points"])
    pk = cacc.dfs_doppler(trial.csi, L=p["L"], window=p["window"], doppler_grid=f)
    if not pk:
        raise RuntimeError("no path detected")
    return _row(pk[0].doppler, trial.truth["doppler"])


def _casr_arc(trial, p):
    r = casr.csi_ratio(trial.csi, 0, p["subcarrier"], 1)
    fit = casr.fit_circle(r.values)
    fd, _ = casr.arc_rotation_rate(r, fit, trial.csi.grid.block_period)
    return _row(fd, trial.truth["doppler"], detail=f"residual_ratio={fit.rms_residual / fit.radius!r}")


def _track_row(trial, centers, est):
    truth = np.interp(centers, np.arange(len(trial.truth["track"])), trial.truth["track"])
    e = est - truth
    ok = np.isfinite(e)
    if not ok.any():
        raise RuntimeError("no window produced an estimate")
    rms = float(np.sqrt(np.mean(e[ok] ** 2)))
    return {"estimate": float(np.mean(est[ok])), "truth": float(np.mean(truth[ok])), "error": rms,
            "spread": float(np.std(e[ok])), "image_ratio": float("nan"),
            "detail": f"missed={int((~ok).sum())}/{len(e)}"}


def _track_peak(tensor_fn):
    def run(trial, p):
        x = cacc.static_filter(tensor_fn(trial.csi, p), tuple(p["passband"]), p["taps"])
        c, f = cacc.track_spectrum_peak(x, window=p["window"], hop=p["hop"])
        return _track_row(trial, c, f)
    return run


def _track_dfs(trial, p):
    grid = np.linspace(-p["doppler_span"], p["doppler_span"], p["doppler_points"])
    c, f = cacc.track_dfs(trial.csi, window=p["window"], hop=p["hop"], doppler_grid=grid)
    return _track_row(trial, c, f)


def _sync_fit(multi):
    def run(trial, p):
        recs = trial.data["records"]
        fit = gt.multi_point_fit(recs) if multi else gt.two_point_fit(recs[0], recs[-1])
        t = float(gt.timestamp_samples(fit, [trial.data["counter"]])[0])
        return _row(t, trial.truth["time"])
    return run


def _net_row(trial, pos):
    err = float(np.linalg.norm(pos - trial.truth["position"]))
    return {"estimate": err, "truth": 0.0, "error": err, "spread": float("nan"), "image_ratio": float("nan"),
            "detail": f"x={float(pos[0])!r};y={float(pos[1])!r}"}


def _net_em(trial, p):
    d = trial.data
    model = net.EmModel(p["walk_sigma"], p["toa_sigma"])
    res = net.em_localize(d["frame"], d["rrus"], d["tx"], model, d["init"], max_iter=p["max_iter"])
    return _net_row(trial, res.position)


def _net_toa(trial, p):
    d = trial.data
    return _net_row(trial, net.toa_ls(d["frame"], d["rrus"], d["tx"], d["init"]))


def _net_tdoa(trial, p):
    d = trial.data
    tdoa = net.toa_to_tdoa(d["frame"], p["ref_rru"]).mean(axis=0)
    return _net_row(trial, net.solve_tdoa(tdoa, d["rrus"], d["tx"], d["init"], ref_rru=p["ref_rru"]).position)


_FILTER = {"passband": [5.0, 45.0], "taps": 65}
_PGRAM = {**_FILTER, "zero_pad": 4}
_TRACK = {**_FILTER, "window": 16, "hop": 4}

REGISTRY: dict[str, MethodSpec] = {m.name: m for m in [
    MethodSpec("cacc.plain", ("los_dynamic",), _PGRAM, _periodogram_method(_plain)),
    MethodSpec("cacc.add_minus", ("los_dynamic",), {**_PGRAM, "alpha_scale": 1.0, "beta_scale": 0.5},
               _periodogram_method(_add_minus)),
    MethodSpec("cacc.mirrored_music", ("los_dynamic",),
               {**_FILTER, "L": 1, "window": [8, 32], "sign_rule": "delay", "delay_span": 200e-9,
                "delay_points": 81, "doppler_span": 50.0, "doppler_points": 201}, _mirrored),
    MethodSpec("cacc.dfs", ("los_dynamic",), {"L": 1, "window": None, "doppler_span": 50.0, "doppler_points": 201},
               _dfs),
    MethodSpec("casr.arc", ("los_dynamic",), {"subcarrier": 0}, _casr_arc),
    MethodSpec("track.plain", ("walker",), _TRACK, _track_peak(_plain)),
    MethodSpec("track.add_minus", ("walker",), {**_TRACK, "alpha_scale": 1.0, "beta_scale": 0.5},
               _track_peak(_add_minus)),
    MethodSpec("track.dfs", ("walker",), {"window": 16, "hop": 4, "doppler_span": 50.0, "doppler_points": 201},
               _track_dfs),
    MethodSpec("sync.gpsta_two_point", ("sync",), {}, _sync_fit(False), sync_method="GPSTA"),
    MethodSpec("sync.gpsta_multi_point", ("sync",), {}, _sync_fit(True), sync_method="GPSTA"),
    MethodSpec("net.em", ("network",), {"walk_sigma": 2e-9, "toa_sigma": 1e-9, "max_iter": 200}, _net_em),
    MethodSpec("net.toa_ls", ("network",), {}, _net_toa),
    MethodSpec("net.tdoa", ("network",), {"ref_rru": 0}, _net_tdoa),
]}


def run_method(name: str, trial, params: dict) -> dict:
    spec = REGISTRY[name]
    return spec.fn(trial, {**spec.params, **params})
