"""GPS-aided timestamping of free-running sample counters.

Each sensor latches its local counter on every PPS edge. A line fitted from
counter ticks to GPS seconds then timestamps any sample, and the samples are
resampled onto a common uniform grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class PpsRecord:
    gps_time: float
    counter: float


@dataclass(frozen=True)
class CounterModel:
    nominal_rate: float = 1e8
    skew_ppm: float = 0.0
    pps_time_noise_sigma: float = 0.0
    counter_read_jitter: int = 0
    offset_ticks: float = 0.0

    def __post_init__(self):
        if self.nominal_rate <= 0:
            raise ValueError("nominal_rate must be positive")
        if self.pps_time_noise_sigma < 0 or self.counter_read_jitter < 0:
            raise ValueError("noise parameters must be non-negative")

    @property
    def rate(self) -> float:
        return self.nominal_rate * (1 + self.skew_ppm * 1e-6)

    def ticks(self, t):
        """True (noiseless) counter value at GPS time ``t``."""
        return self.offset_ticks + self.rate * np.asarray(t, dtype=float)

    def true_time(self, counter):
        return (np.asarray(counter, dtype=float) - self.offset_ticks) / self.rate


@dataclass(frozen=True)
class TimestampFit:
    """``t = slope * (C - c_ref) + t_ref``.

    Keeping a reference point avoids cancellation when counters are large.
    """

    anchors: tuple
    slope: float
    t_ref: float
    c_ref: float

    def __post_init__(self):
        if len(self.anchors) < 2:
            raise ValueError("a fit needs at least two anchors")
        if not self.slope > 0:
            raise ValueError("slope must be positive")

    @property
    def intercept(self) -> float:
        return self.t_ref - self.slope * self.c_ref

    def __call__(self, counters):
        return timestamp_samples(self, counters)


def simulate_pps(model: CounterModel, num_records: int, rng: np.random.Generator,
                 true_clock: Callable[[np.ndarray], np.ndarray] | None = None,
                 start: int = 0) -> list[PpsRecord]:
    """PPS records at whole GPS seconds ``start .. start + K - 1``.

    ``true_clock`` maps GPS seconds to true counter ticks; by default the
    affine clock of ``model``.
    """
    if num_records < 2:
        raise ValueError("need at least two PPS records")
    k = np.arange(start, start + num_records, dtype=float)
    clock = true_clock if true_clock is not None else model.ticks
    counters = np.asarray(clock(k), dtype=float)
    t = k.copy()
    if model.pps_time_noise_sigma > 0:
        t = t + rng.normal(0.0, model.pps_time_noise_sigma, num_records)
    if model.counter_read_jitter > 0:
        J = int(model.counter_read_jitter)
        counters = counters + rng.integers(-J, J + 1, num_records)
    return [PpsRecord(float(a), float(b)) for a, b in zip(t, counters)]


def two_point_fit(rec_k: PpsRecord, rec_kl: PpsRecord) -> TimestampFit:
    """Line through two PPS anchors: ``t_x = t_k + (C_x - C_k) / (C_kl - C_k) * l``."""
    dc = rec_kl.counter - rec_k.counter
    if dc == 0:
        raise ValueError("anchors have equal counters")
    if dc < 0:
        raise ValueError("second anchor must have the larger counter")
    l = rec_kl.gps_time - rec_k.gps_time
    return TimestampFit((rec_k, rec_kl), l / dc, rec_k.gps_time, rec_k.counter)


def multi_point_fit(records: Sequence[PpsRecord]) -> TimestampFit:
    """Ordinary least-squares line of GPS time against counter."""
    if len(records) < 2:
        raise ValueError("need at least two records")
    if len(records) == 2:
        a, b = sorted(records, key=lambda r: r.counter)
        return two_point_fit(a, b)
    C = np.array([r.counter for r in records], dtype=float)
    t = np.array([r.gps_time for r in records], dtype=float)
    c0, t0 = C.mean(), t.mean()
    dC = C - c0
    sxx = float(dC @ dC)
    if sxx == 0:
        raise ValueError("degenerate fit: all counters equal")
    slope = float(dC @ (t - t0)) / sxx
    return TimestampFit(tuple(records), slope, float(t0), float(c0))


def timestamp_samples(fit: TimestampFit, counters) -> np.ndarray:
    c = np.asarray(counters, dtype=float)
    return fit.t_ref + fit.slope * (c - fit.c_ref)


def two_point_error_std(model: CounterModel, fraction: float = 0.5) -> float:
    """Analytic std of a two-point timestamp at ``fraction`` of the way between anchors.

    First-order propagation: GPS-time noise enters with weights ``1 - a`` and
    ``a``; counter jitter (discrete uniform, variance ``J(J+1)/3``) with the
    same weights divided by the rate.
    """
    a = float(fraction)
    J = int(model.counter_read_jitter)
    var_c = J * (J + 1) / 3.0
    w = (1 - a) ** 2 + a ** 2
    return float(np.sqrt(w * (model.pps_time_noise_sigma ** 2 + var_c / model.rate ** 2)))


def resample_align(samples, timestamps, target_grid) -> np.ndarray:
    """Linear interpolation of real and imaginary parts onto ``target_grid``."""
    s = np.asarray(samples)
    ts = np.asarray(timestamps, dtype=float)
    tg = np.asarray(target_grid, dtype=float)
    if s.shape != ts.shape:
        raise ValueError("samples and timestamps differ in length")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    if tg.size and (tg.min() < ts[0] or tg.max() > ts[-1]):
        raise ValueError("target grid extends outside the timestamp span")
    if np.iscomplexobj(s):
        return np.interp(tg, ts, s.real) + 1j * np.interp(tg, ts, s.imag)
    return np.interp(tg, ts, s)


def interpolation_bound(step: float, frequency: float, amplitude: float) -> float:
    """Max error of linear interpolation of a tone: ``h^2/8 * (2 pi f)^2 * A``."""
    return step ** 2 / 8.0 * (2 * np.pi * frequency) ** 2 * amplitude


@dataclass(frozen=True)
class SyncAccuracy:
    method: str
    accuracy_ns_low: float
    accuracy_ns_high: float
    frequency_accuracy: float | None
    convergence_s: float | None
    cost_usd: float | None
    note: str = field(default="")


_SYNC_TABLE = {
    "DTE": SyncAccuracy("DTE", 3.0, 10.0, 4e-14, 1000.0, None, "dedicated timing equipment"),
    "GPSDO": SyncAccuracy("GPSDO", 0.0, 5.5, 2.6e-14, 100.0, 1000.0, "GPS-disciplined oscillator"),
    "GPSTA": SyncAccuracy("GPSTA", 0.0, 42.0, None, 1.0, 100.0, "GPS-aided timestamping"),
}


def sync_error_report(method: str) -> SyncAccuracy:
    """Published reference accuracy of a synchronization method (annotation only)."""
    try:
        return _SYNC_TABLE[method.upper()]
    except KeyError:
        raise ValueError(f"unknown synchronization method {method!r}") from None


def write_records_csv(path, records: Sequence[PpsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["counter", "timestamp"])
        for r in records:
            w.writerow([repr(float(r.counter)), repr(float(r.gps_time))])


def read_records_csv(path) -> list[PpsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [PpsRecord(float(r["timestamp"]), float(r["counter"])) for r in rows]
