"""Acceptance suite. Each check prints one PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py`` or through pytest.
"""

import contextlib
import io
import sys
import tempfile
import time
from pathlib import Path as FsPath

import numpy as np
import pytest

sys.path.insert(0, str(FsPath(__file__).parent))
from helpers import SQUARE, SQUARE_TX, arc_scenario, em_scenario, tdoa_geometry  # noqa: E402

from asyncisac import gps_timestamp as gt  # noqa: E402
from asyncisac.bench import demo_ranging_ambiguity, execute, load_config, validate  # noqa: E402
from asyncisac.bench.cli import main as cli_main  # noqa: E402
from asyncisac.cacc import add_minus, cross_correlate, relative_spectrum  # noqa: E402
from asyncisac.casr import arc_rotation_rate, csi_ratio, fit_circle  # noqa: E402
from asyncisac.networked import (  # noqa: E402
    EmModel, em_localize, interior_angles, simulate_toas, solve_aoa, solve_tdoa, toa_ls, toa_to_tdoa,
)
from asyncisac.signal_model import OfdmGrid, Path, clock_trace, synthesize_csi  # noqa: E402

CONFIGS = FsPath(__file__).resolve().parent.parent / "configs"


def _report(num, title, ok, detail, elapsed, limit):
    timely = elapsed <= limit
    verdict = "PASS" if ok and timely else "FAIL"
    line = f"[{verdict}] criterion {num}: {title} | {detail} | {elapsed:.1f}s (limit {limit:.0f}s)"
    return ok and timely, line


def _batches(values, size=10):
    v = np.asarray(values, float)
    return v[: len(v) // size * size].reshape(-1, size).mean(axis=1)


def check_clock_cancellation():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        g = OfdmGrid(num_subcarriers=16, num_rx=int(rng.integers(2, 5)), num_tx=int(rng.integers(1, 3)))
        paths = [Path(rng.uniform(0, 300e-9), rng.uniform(-40, 40), complex(*rng.normal(size=2)),
                      aoa=rng.uniform(-1.4, 1.4), aod=rng.uniform(-1.4, 1.4), is_los=(k == 0))
                 for k in range(int(rng.integers(1, 5)))]
        a = synthesize_csi(paths, g, clock_trace(40, g, rng))
        b = synthesize_csi(paths, g, clock_trace(40, g, rng))
        pairs = [(cross_correlate(a).data, cross_correlate(b).data), (add_minus(a).data, add_minus(b).data)]
        for p in range(1, g.num_rx):
            for n in (0, 7):
                pairs.append((csi_ratio(a, 0, n, p).values, csi_ratio(b, 0, n, p).values))
        for x, y in pairs:
            worst = max(worst, float(np.max(np.abs(x - y)) / np.max(np.abs(x))))
    return _report(1, "clock cancellation", worst <= 1e-9, f"max relative difference {worst:.2e} (<= 1e-9)",
                   time.perf_counter() - t0, 60)


def check_ranging():
    t0 = time.perf_counter()
    rows = {r["stability_ppm"]: r for r in demo_ranging_ambiguity()}
    v = rows[20.0]["bound_m"]
    ok = abs(v - 6.0) <= 0.02 * 6.0 and rows[20.0]["mc_max_m"] <= v
    return _report(2, "ranging ambiguity", ok, f"20 ppm over 1 ms -> {v:.3f} m (6.0 m +/- 2%)",
                   time.perf_counter() - t0, 30)


def check_image_ordering():
    t0 = time.perf_counter()
    worst = 0.0
    g = OfdmGrid(num_subcarriers=64, block_period=0.01, num_rx=2)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        paths = [Path(30e-9, 0, np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(-1, 1), is_los=True),
                 Path(80e-9, 12.0, 0.1 * np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(-1, 1))]
        spec = relative_spectrum(cross_correlate(synthesize_csi(paths, g, clock_trace(250, g, rng))))
        hi, lo = spec.at(50e-9, 12.0), spec.at(-50e-9, -12.0)
        worst = max(worst, abs(hi - lo) / max(hi, lo))
    cfg = validate({"scenario": {"type": "los_dynamic", "snr_db": 20.0, "dynamic_power_db": -20.0},
                    "methods": [{"name": "cacc.plain"}, {"name": "cacc.add_minus"}, {"name": "cacc.mirrored_music"}],
                    "trials": 100, "seed": 0})
    rows, _, _ = execute(cfg, workers=1)
    img = {k: [r["image_ratio"] for r in v] for k, v in rows.items()}
    finite = all(np.all(np.isfinite(v)) for v in img.values())
    pl, am, mm = (_batches(img[k]) for k in ("cacc.plain", "cacc.add_minus", "cacc.mirrored_music"))
    frac = float(np.mean((mm < am) & (am < pl)))
    ok = worst <= 1e-6 and finite and frac >= 0.9
    detail = (f"+/- peak mismatch {worst:.1e} (<= 1e-6); ordering mirrored<add-minus<plain in {frac:.0%} of batches "
              f"(>= 90%); mean ratios {np.mean(img['cacc.mirrored_music']):.3f}/"
              f"{np.mean(img['cacc.add_minus']):.3f}/{np.mean(img['cacc.plain']):.3f}")
    return _report(3, "image symmetry and suppression", ok, detail, time.perf_counter() - t0, 300)


def check_walker_ranking():
    t0 = time.perf_counter()
    cfg = validate({"scenario": {"type": "walker", "snr_db": 15.0, "sweep_amplitude": 40.0},
                    "methods": [{"name": "track.dfs"}, {"name": "track.add_minus"}], "trials": 100, "seed": 0})
    rows, _, _ = execute(cfg, workers=1)
    spread = {k: [r["spread"] if r["status"] == "ok" else np.inf for r in v] for k, v in rows.items()}
    dfs, am = _batches(spread["track.dfs"]), _batches(spread["track.add_minus"])
    frac = float(np.mean(dfs <= am))
    return _report(4, "walker Doppler spread ranking", frac >= 0.9,
                   f"std(dfs) <= std(add-minus) in {frac:.0%} of batches (>= 90%); "
                   f"mean std {np.mean(dfs):.2f} vs {np.mean(am):.2f} Hz", time.perf_counter() - t0, 300)


def check_casr():
    t0 = time.perf_counter()
    clean, noisy, fd_err, flips = [], [], [], 0
    for seed in range(100):
        r = csi_ratio(arc_scenario(seed, T=200), 0, 0, 1)
        f = fit_circle(r.values)
        clean.append(f.rms_residual / f.radius)
        rn = csi_ratio(arc_scenario(seed, T=200, snr_db=20.0), 0, 0, 1)
        fn = fit_circle(rn.values)
        noisy.append(fn.rms_residual / fn.radius)
        pos = csi_ratio(arc_scenario(seed), 0, 0, 1)
        neg = csi_ratio(arc_scenario(seed, fd=-2.0), 0, 0, 1)
        fd_p, s_p = arc_rotation_rate(pos, fit_circle(pos.values), 0.01)
        fd_n, s_n = arc_rotation_rate(neg, fit_circle(neg.values), 0.01)
        fd_err.append(max(abs(abs(fd_p) - 2.0), abs(abs(fd_n) - 2.0)))
        flips += s_p == -s_n != 0
    subs = {
        "noiseless residual/radius < 1e-6": max(clean) < 1e-6,
        "20 dB residual/radius < 0.05": max(noisy) < 0.05,
        "|f_D| within 0.05 Hz of 2": max(fd_err) < 0.05,
        "direction flips 100/100": flips == 100,
    }
    detail = (f"noiseless max {max(clean):.1e}; 20 dB max {max(noisy):.3f} mean {np.mean(noisy):.3f}; "
              f"f_D max error {max(fd_err):.4f} Hz; flips {flips}/100")
    failed = [k for k, v in subs.items() if not v]
    if failed:
        detail += "; failed: " + ", ".join(failed)
    return _report(5, "CASR Moebius circle", not failed, detail, time.perf_counter() - t0, 60)


def check_gpsta():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    exact = 0.0
    for _ in range(50):
        m = gt.CounterModel(skew_ppm=rng.uniform(-50, 50), offset_ticks=float(rng.integers(0, 2 ** 31)))
        recs = gt.simulate_pps(m, 10, rng, start=int(rng.integers(0, 1000)))
        probe = np.linspace(recs[0].counter, recs[-1].counter, 101)
        for fit in (gt.two_point_fit(recs[0], recs[-1]), gt.multi_point_fit(recs)):
            exact = max(exact, float(np.max(np.abs(fit(probe) - m.true_time(probe)))))
    m = gt.CounterModel(pps_time_noise_sigma=30e-9)
    err = [gt.two_point_fit(*gt.simulate_pps(m, 2, rng))(m.ticks(0.5)) - 0.5 for _ in range(1000)]
    rmse = float(np.sqrt(np.mean(np.square(err))))
    analytic = gt.two_point_error_std(m)
    rel = abs(rmse / analytic - 1)
    multi = []
    for K in (2, 8, 32):
        mid = (K - 1) / 2
        e = [gt.multi_point_fit(gt.simulate_pps(m, K, rng))(m.ticks(mid)) - mid for _ in range(1000)]
        multi.append(float(np.sqrt(np.mean(np.square(e)))))
    ok = exact <= 1e-12 and rel <= 0.2 and multi[0] > multi[1] > multi[2]
    detail = (f"affine error {exact:.1e} s; two-point RMSE {rmse * 1e9:.2f} ns vs analytic {analytic * 1e9:.2f} ns "
              f"({rel:.1%}); multi-point RMSE K=2/8/32: " + "/".join(f"{v * 1e9:.2f}" for v in multi) + " ns")
    return _report(6, "GPSTA", ok, detail, time.perf_counter() - t0, 60)


def check_networked():
    t0 = time.perf_counter()
    tdoa_err = 0.0
    for seed in range(100):
        rrus, tx, target, init = tdoa_geometry(seed)
        tdoa = toa_to_tdoa(simulate_toas(rrus, tx, target[None], np.random.default_rng(seed)))[0]
        tdoa_err = max(tdoa_err, float(np.linalg.norm(solve_tdoa(tdoa, rrus, tx, init).position - target)))
    rng = np.random.default_rng(0)
    aoa_err, n_aoa = 0.0, 0
    while n_aoa < 1000:
        U, V, X = rng.uniform(-10, 10, (3, 2))
        a, b = interior_angles(U, V, X)
        if min(a, b) < 1e-3 or a + b > np.pi - 1e-3:
            continue
        side = 1 if (V - U)[0] * (X - U)[1] - (V - U)[1] * (X - U)[0] > 0 else -1
        aoa_err = max(aoa_err, float(np.linalg.norm(solve_aoa(U, V, a, b, side) - X)))
        n_aoa += 1
    monotone, em_err, ls_err = 0, [], []
    for seed in range(100):
        rng, target, init = em_scenario(seed)
        f = simulate_toas(SQUARE, SQUARE_TX, np.tile(target, (50, 1)), rng, toa_sigma=1e-9, walk_sigma=2e-9)
        res = em_localize(f, SQUARE, SQUARE_TX, EmModel(2e-9, 1e-9), init)
        monotone += bool(np.all(np.diff(res.loglik) >= -1e-8))
        em_err.append(np.linalg.norm(res.position - target))
        ls_err.append(np.linalg.norm(toa_ls(f, SQUARE, SQUARE_TX, init) - target))
    ok = tdoa_err < 1e-6 and aoa_err < 1e-9 and monotone == 100 and np.median(em_err) < np.median(ls_err)
    detail = (f"TDOA max error {tdoa_err:.1e} m; AOA max error {aoa_err:.1e} m; EM monotone {monotone}/100; "
              f"median error EM {np.median(em_err):.3f} m vs TOA-LS {np.median(ls_err):.3f} m")
    return _report(7, "networked solvers", ok, detail, time.perf_counter() - t0, 300)


def check_determinism():
    t0 = time.perf_counter()
    same, names = True, []
    with tempfile.TemporaryDirectory() as tmp:
        for cfg_path in sorted(CONFIGS.glob("*.json")):
            cfg = load_config(cfg_path)
            outs = []
            for k, workers in enumerate((1, 2)):
                out = FsPath(tmp) / f"{cfg_path.stem}_{k}"
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli_main(["run", str(cfg_path), "--out", str(out), "--workers", str(workers),
                                     "--trials", str(min(cfg["trials"], 20))])
                same &= code == 0
                outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            same &= bool(outs[0]) and outs[0] == outs[1]
            names.append(cfg_path.stem)
    return _report(8, "determinism", same, f"configs {', '.join(names)} byte-identical across workers 1 and 2",
                   time.perf_counter() - t0, 300)


CHECKS = [check_clock_cancellation, check_ranging, check_image_ordering, check_walker_ranking, check_casr,
          check_gpsta, check_networked, check_determinism]


@pytest.mark.slow
@pytest.mark.parametrize("check", CHECKS, ids=lambda f: f.__name__.removeprefix("check_"))
def test_acceptance(check, capsys):
    ok, line = check()
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [c() for c in CHECKS]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
