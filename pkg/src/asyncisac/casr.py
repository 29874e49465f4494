"""Cross-antenna signal ratio (CASR).

Dividing the CSI of one antenna by a reference antenna removes every factor
the two receive chains share, clock offsets included. For one dynamic path
over a static background the ratio is a Moebius image of the unit circle,
so it moves along a circular arc whose rotation rate is the Doppler. Using
the static background instead of the reference antenna as denominator keeps
the sum of several dynamic sources linear.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .signal_model import CsiTensor, synthesize_csi


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class RatioSeries:
    values: np.ndarray
    n: int
    p: int
    ref: int
    q: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "re", "im"])
            for t, v in enumerate(self.values):
                w.writerow([t, repr(float(v.real)), repr(float(v.imag))])


@dataclass(frozen=True)
class CircleFit:
    center: complex
    radius: float
    rms_residual: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["center_re", "center_im", "radius", "rms_residual"])
            w.writerow([repr(self.center.real), repr(self.center.imag), repr(self.radius), repr(self.rms_residual)])


def csi_ratio(csi: CsiTensor, ref_antenna: int, n: int, p: int, q: int = 0,
              floor: float = 1e-12) -> RatioSeries:
    """``R(t) = H(n,t,p,q) / H(n,t,ref,q)``.

    Raises ``ZeroDivisionError`` when the reference falls below ``floor`` times
    the tensor RMS at any block.
    """
    if csi.grid.num_rx < 2:
        raise ValueError("CSI ratio needs at least two receive antennas")
    if p == ref_antenna:
        raise ValueError("p must differ from the reference antenna")
    H = csi.data
    den = H[n, :, ref_antenna, q]
    if np.any(np.abs(den) < floor * np.sqrt(np.mean(np.abs(H) ** 2))):
        raise ZeroDivisionError("reference CSI below floor (ratio pole)")
    return RatioSeries(H[n, :, p, q] / den, n, p, ref_antenna, q)


def fit_circle(points) -> CircleFit:
    """Algebraic (Kasa) least-squares circle through complex points."""
    z = np.asarray(points, dtype=complex).ravel()
    if z.size < 3:
        raise ValueError("need at least three points")
    # center and scale for conditioning
    mu = z.mean()
    scale = np.sqrt(np.mean(np.abs(z - mu) ** 2))
    if scale == 0:
        raise DegenerateFitError("all points coincide")
    w = (z - mu) / scale
    A = np.column_stack([w.real, w.imag, np.ones(z.size)])
    b = -(w.real ** 2 + w.imag ** 2)
    M = A.T @ A
    if np.linalg.cond(M) > 1e12:
        raise DegenerateFitError("points are collinear; circle undefined")
    D, E, F = np.linalg.solve(M, A.T @ b)
    c = complex(-D / 2, -E / 2)
    r2 = c.real ** 2 + c.imag ** 2 - F
    if r2 <= 0:
        raise DegenerateFitError("fit produced an imaginary radius")
    center = mu + scale * c
    radius = scale * float(np.sqrt(r2))
    resid = np.abs(z - center) - radius
    return CircleFit(complex(center), radius, float(np.sqrt(np.mean(resid ** 2))))


def arc_rotation_rate(series: RatioSeries | np.ndarray, fit: CircleFit, block_period: float,
                      radius_floor: float = 1e-12, max_residual: float = 0.2) -> tuple[float, int]:
    """Doppler (Hz) and rotation direction (+1 counter-clockwise, -1 clockwise, 0 none).

    Slope of the unwrapped angle about the circle center, by least squares.
    A series with no spread is reported as ``(0.0, 0)``.
    """
    z = np.asarray(getattr(series, "values", series), dtype=complex)
    spread = np.max(np.abs(z - z.mean()))
    if spread <= radius_floor * max(1.0, np.abs(z).max()):
        return 0.0, 0
    if fit.radius <= radius_floor:
        raise ValueError("circle radius below floor: no dynamic motion")
    if fit.rms_residual >= max_residual * fit.radius:
        raise ValueError("points do not lie on an arc (fit residual too large)")
    ang = np.unwrap(np.angle(z - fit.center))
    t = np.arange(z.size)
    slope = np.polyfit(t, ang, 1)[0]
    doppler = slope / (2 * np.pi * block_period)
    return float(doppler), int(np.sign(slope))


@dataclass(frozen=True)
class Background:
    """Static background, broadcastable to ``(n, t, p, q)``.

    ``values`` may carry the per-block clock factor (instantaneous mode) or be
    constant over blocks. ``valid`` is False when a temporal mean was taken
    over blocks whose clock phase was not aligned.
    """

    values: np.ndarray
    valid: bool
    mode: str


def ground_truth_background(static_paths, csi: CsiTensor, clock_trace) -> Background:
    """Background synthesized from the known static paths and clock trace."""
    S = synthesize_csi(static_paths, csi.grid, clock_trace, csi.num_blocks).data
    return Background(S, True, "ground_truth")


def static_background(csi: CsiTensor, align: bool = False) -> Background:
    """Temporal mean of each (n, p, q) series.

    With ``align=True`` every (n, t) is first de-rotated by the phase of the
    antenna-summed CSI, and the returned background carries that phase back
    per block so it shares the clock factor of the measurement.
    """
    H = csi.data
    if H.shape[1] < 8:
        raise ValueError("need at least 8 blocks to estimate the background")
    if align:
        g = np.sum(H, axis=(2, 3), keepdims=True)
        g = np.divide(g, np.abs(g), out=np.ones_like(g), where=np.abs(g) > 0)
        S = np.mean(H * np.conj(g), axis=1, keepdims=True)
        return Background(S * g, True, "aligned")
    S = np.mean(H, axis=1, keepdims=True)
    return Background(S, csi.clock_mode == "frozen", "mean")


def linearized_ratio(csi: CsiTensor, background: Background, floor: float = 1e-12) -> np.ndarray:
    """``R(n,t,p,q) = H(n,t,p,q) / S(n,t,p,q)`` for every element.

    ``R - 1`` is the sum of each dynamic source's contribution over the common
    background.
    """
    if not background.valid:
        raise ValueError("background is not valid for this tensor (clock phase not aligned)")
    S = np.broadcast_to(background.values, csi.data.shape)
    if np.any(np.abs(S) < floor * np.sqrt(np.mean(np.abs(S) ** 2))):
        raise ZeroDivisionError("background below floor")
    return csi.data / S
