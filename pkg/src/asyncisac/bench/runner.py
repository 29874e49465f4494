"""Monte-Carlo runs, comparison tables and the ranging demo.

CSV outputs depend only on the configuration: trial ``i`` uses seed
``seed + i``, rows are assembled in trial order whatever the worker count,
and BLAS runs single-threaded inside every trial. Wall-clock times go to a
separate ``timing.json``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from threadpoolctl import threadpool_limits

from .. import gps_timestamp as gt
from ..signal_model import ClockState, evolve_clock
from .methods import REGISTRY, run_method
from .scenarios import build_trial

ROW_FIELDS = ["trial", "seed", "status", "estimate", "truth", "error", "spread", "image_ratio", "detail"]
SUMMARY_FIELDS = ["method", "trials", "ok", "failed", "rmse", "bias", "std", "mean_image_ratio"]
RANKING_FIELDS = ["rank", "method", "std", "rmse", "ok", "reference_accuracy_ns"]


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def run_trial(cfg: dict, index: int) -> tuple[list[dict], dict]:
    """All methods on trial ``index``. Method failures become rows, never exceptions."""
    seed = cfg["seed"] + index
    rows, times = [], {}
    with threadpool_limits(1):
        trial = build_trial(cfg, seed)
        for m in cfg["methods"]:
            t0 = time.perf_counter()
            try:
                row = {"status": "ok", **run_method(m["name"], trial, m["params"])}
            except Exception as e:  # crash isolation: record and continue
                msg = f"{type(e).__name__}: {e}".replace("\n", " ")
                row = {"status": "failed", "estimate": float("nan"), "truth": float("nan"), "error": float("nan"),
                       "spread": float("nan"), "image_ratio": float("nan"), "detail": msg}
            times[m["label"]] = time.perf_counter() - t0
            rows.append({"trial": index, "seed": seed, **row})
    return rows, times


def _trial_star(args):
    return run_trial(*args)


def summarize(label: str, name: str, rows: list[dict]) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    err = np.array([r["error"] for r in ok], float)
    spread = np.array([r["spread"] for r in ok], float)
    img = np.array([r["image_ratio"] for r in ok], float)
    nan = float("nan")
    if ok and np.all(np.isfinite(spread)):
        std = float(np.mean(spread))
    else:
        std = float(np.std(err)) if len(err) > 1 else (0.0 if len(err) == 1 else nan)
    return {
        "method": label,
        "trials": len(rows),
        "ok": len(ok),
        "failed": len(rows) - len(ok),
        "rmse": float(np.sqrt(np.mean(err ** 2))) if len(err) else nan,
        "bias": float(np.mean(err)) if len(err) else nan,
        "std": std,
        "mean_image_ratio": float(np.mean(img)) if len(img) and np.all(np.isfinite(img)) else nan,
    }


def execute(cfg: dict, workers: int | None = None) -> tuple[dict, list[dict], dict]:
    """Run every trial; returns ``(rows_by_label, summary_rows, timing)``."""
    workers = workers or cfg.get("workers", 1)
    jobs = [(cfg, i) for i in range(cfg["trials"])]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_star, jobs))
    else:
        results = [_trial_star(j) for j in jobs]
    labels = [m["label"] for m in cfg["methods"]]
    by_label = {lab: [] for lab in labels}
    timing = {lab: 0.0 for lab in labels}
    for rows, times in results:
        for lab, row in zip(labels, rows):
            by_label[lab].append(row)
            timing[lab] += times[lab]
    names = {m["label"]: m["name"] for m in cfg["methods"]}
    summary = [summarize(lab, names[lab], by_label[lab]) for lab in labels]
    return by_label, summary, timing


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label)


def run(cfg: dict, out_dir=None, workers: int | None = None) -> Path:
    """Write one CSV per method, ``summary.csv`` and ``timing.json``."""
    out = Path(out_dir or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    by_label, summary, timing = execute(cfg, workers)
    for lab, rows in by_label.items():
        _write_csv(out / f"method_{_safe(lab)}.csv", ROW_FIELDS, rows)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": timing}, indent=2, sort_keys=True) + "\n")
    return out


def ranking(cfg: dict, summary: list[dict]) -> list[dict]:
    """Rank by estimate standard deviation, then RMSE, then label."""
    names = {m["label"]: m["name"] for m in cfg["methods"]}

    def key(r):
        s = r["std"] if math.isfinite(r["std"]) else math.inf
        e = r["rmse"] if math.isfinite(r["rmse"]) else math.inf
        return (s, e, r["method"])

    out = []
    for k, r in enumerate(sorted(summary, key=key), 1):
        sync = REGISTRY[names[r["method"]]].sync_method
        ref = gt.sync_error_report(sync).accuracy_ns_high if sync else float("nan")
        out.append({"rank": k, "method": r["method"], "std": r["std"], "rmse": r["rmse"], "ok": r["ok"],
                    "reference_accuracy_ns": ref})
    return out


def compare_methods(cfg: dict, out_dir=None, workers: int | None = None) -> list[dict]:
    """Run the configuration and write ``ranking.csv`` next to the usual reports."""
    out = Path(out_dir or cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    by_label, summary, timing = execute(cfg, workers)
    for lab, rows in by_label.items():
        _write_csv(out / f"method_{_safe(lab)}.csv", ROW_FIELDS, rows)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    table = ranking(cfg, summary)
    _write_csv(out / "ranking.csv", RANKING_FIELDS, table)
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": timing}, indent=2, sort_keys=True) + "\n")
    return table


def ranging_error(stability_ppm: float, duration: float) -> float:
    """Worst-case range error from timing-offset drift: ``c * ppm * 1e-6 * duration``."""
    return SPEED_OF_LIGHT * stability_ppm * 1e-6 * duration


def demo_ranging_ambiguity(ppm_values=(0.0, 10.0, 20.0), duration: float = 1e-3, trials: int = 2000,
                           seed: int = 0, out_dir=None) -> list[dict]:
    """Range error induced by timing-offset drift over ``duration``.

    ``bound_m`` is the analytic worst case; ``mc_max_m`` and ``mc_rms_m`` come
    from drifting a clock ``trials`` times with the simulator's bounded walk.
    """
    rows = []
    for ppm in ppm_values:
        rng = np.random.default_rng(seed)
        st = ClockState(stability_ppm=ppm, phase_mode="frozen")
        if ppm > 0:
            drift = np.array([evolve_clock(st, duration, rng).tmo for _ in range(trials)])
        else:
            drift = np.zeros(trials)
        rng_err = SPEED_OF_LIGHT * np.abs(drift)
        rows.append({"stability_ppm": float(ppm), "duration_s": float(duration),
                     "tmo_drift_bound_s": ppm * 1e-6 * duration, "bound_m": ranging_error(ppm, duration),
                     "mc_max_m": float(rng_err.max()), "mc_rms_m": float(np.sqrt(np.mean(rng_err ** 2)))})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ranging_ambiguity.csv", list(rows[0]), rows)
    return rows
