"""Spectral estimation numerics shared by the cross-antenna and network modules."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .signal_model import OfdmGrid


class RankDeficientWarning(UserWarning):
    """Sample covariance handed to MUSIC has lower rank than its dimension."""


@dataclass(frozen=True)
class Spectrum2D:
    """Non-negative values over ``(delay_axis, doppler_axis)``; ``values[i, j]``."""

    values: np.ndarray
    delay_axis: np.ndarray
    doppler_axis: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.delay_axis), len(self.doppler_axis)):
            raise ValueError("values shape must match the axes")
        for ax in (self.delay_axis, self.doppler_axis):
            if len(ax) > 1 and np.any(np.diff(ax) <= 0):
                raise ValueError("axes must be strictly increasing")

    def at(self, delay: float, doppler: float) -> float:
        """Value at the grid cell nearest to ``(delay, doppler)``."""
        i = int(np.argmin(np.abs(self.delay_axis - delay)))
        j = int(np.argmin(np.abs(self.doppler_axis - doppler)))
        return float(self.values[i, j])

    def to_csv(self, path) -> None:
        """First row: blank then Doppler axis; each further row: delay then values."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delay\\doppler"] + [repr(float(f)) for f in self.doppler_axis])
            for d, row in zip(self.delay_axis, self.values):
                w.writerow([repr(float(d))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class Peak:
    delay: float
    doppler: float
    magnitude: float


class PeakSet(tuple):
    """Peaks sorted by descending magnitude."""

    def __new__(cls, peaks=()):
        return super().__new__(cls, tuple(peaks))

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler for p in self])

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delay", "doppler", "magnitude"])
            for p in self:
                w.writerow([repr(p.delay), repr(p.doppler), repr(p.magnitude)])


def periodogram_axes(num_subcarriers: int, num_blocks: int, grid: OfdmGrid,
                     zero_pad: int = 4) -> tuple[np.ndarray, np.ndarray]:
    nf = zero_pad * num_subcarriers
    nt = zero_pad * num_blocks
    delay = np.arange(-(nf // 2), nf - nf // 2) / (nf * grid.subcarrier_spacing)
    doppler = np.arange(-(nt // 2), nt - nt // 2) / (nt * grid.block_period)
    return delay, doppler


def periodogram_2d(data: np.ndarray, grid: OfdmGrid, zero_pad: int = 4) -> Spectrum2D:
    """Matched-filter power over a delay-Doppler grid.

    ``values(d, f) = |sum_{n,t} data[n,t] e^{+j2pi d n f0} e^{-j2pi f t Ts}|^2``
    evaluated on the zero-padded FFT grid, delay in ``[-1/(2f0), 1/(2f0))`` and
    Doppler in ``[-1/(2Ts), 1/(2Ts))``.
    """
    data = np.asarray(data, dtype=complex)
    if data.ndim != 2 or data.size == 0:
        raise ValueError("data must be a non-empty (n, t) matrix")
    N, T = data.shape
    nf, nt = zero_pad * N, zero_pad * T
    # +j kernel over n is an inverse FFT, -j kernel over t a forward FFT
    spec = np.fft.ifft(data, n=nf, axis=0) * nf
    spec = np.fft.fft(spec, n=nt, axis=1)
    spec = np.fft.fftshift(spec, axes=(0, 1))
    delay, doppler = periodogram_axes(N, T, grid, zero_pad)
    return Spectrum2D(np.abs(spec) ** 2, delay, doppler)


def doppler_periodogram(series: np.ndarray, block_period: float, zero_pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """1-D version over blocks: returns ``(frequencies, power)``."""
    series = np.atleast_2d(np.asarray(series, dtype=complex))
    nt = zero_pad * series.shape[-1]
    spec = np.fft.fftshift(np.fft.fft(series, n=nt, axis=-1), axes=-1)
    freqs = np.arange(-(nt // 2), nt - nt // 2) / (nt * block_period)
    return freqs, np.sum(np.abs(spec) ** 2, axis=0)


def hankel_snapshots(snapshots: np.ndarray, window) -> np.ndarray:
    """Sub-array smoothing of snapshot columns.

    An int window slides over the rows of a ``(dim, K)`` matrix. A
    ``(wn, wt)`` window slides over a ``(N, T[, K])`` array in two dimensions,
    each sub-array vectorized in C order.
    """
    snapshots = np.asarray(snapshots)
    if np.ndim(window) == 0:
        X = snapshots if snapshots.ndim == 2 else snapshots[:, None]
        w = int(window)
        dim = X.shape[0]
        if not 1 <= w <= dim:
            raise ValueError("smoothing window must lie in [1, dim]")
        idx = np.arange(w)[:, None] + np.arange(dim - w + 1)[None, :]
        return X[idx].reshape(w, -1)
    wn, wt = window
    X = snapshots if snapshots.ndim == 3 else snapshots[:, :, None]
    N, T, K = X.shape
    if not (1 <= wn <= N and 1 <= wt <= T):
        raise ValueError("smoothing window larger than the data")
    sub = np.lib.stride_tricks.sliding_window_view(X, (wn, wt), axis=(0, 1))
    # sub: (N-wn+1, T-wt+1, K, wn, wt)
    return sub.reshape(-1, wn * wt).T


def noise_subspace(snapshots: np.ndarray, model_order: int, warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of the smallest ``dim - L`` eigenvalues of the sample covariance.

    Returns ``(E_noise, eigenvalues_descending)``.
    """
    dim, K = snapshots.shape
    if model_order >= dim:
        raise ValueError(f"model order {model_order} must be smaller than the smoothed dimension {dim}")
    if K < model_order + 1:
        raise ValueError("not enough snapshots for the model order")
    R = snapshots @ snapshots.conj().T / K
    w, V = np.linalg.eigh(R)
    w, V = w[::-1], V[:, ::-1]
    if warn and np.sum(w > w[0] * dim * np.finfo(float).eps) < dim:
        warnings.warn("sample covariance is rank deficient", RankDeficientWarning, stacklevel=3)
    return V[:, model_order:], w


def music_pseudospectrum(E_noise: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``||a||^2 / (a^H En En^H a)`` for every column of ``A``."""
    proj = E_noise.conj().T @ A
    denom = np.sum(np.abs(proj) ** 2, axis=0)
    norm = np.sum(np.abs(A) ** 2, axis=0)
    floor = np.finfo(float).eps * np.maximum(norm, np.finfo(float).tiny)
    return norm / np.maximum(denom, floor)


def music_spectrum(snapshots: np.ndarray, steering: Callable[[float], np.ndarray] | np.ndarray,
                   model_order: int, smoothing_window=None, grid: np.ndarray | None = None) -> np.ndarray:
    """MUSIC pseudo-spectrum over a parameter grid.

    Parameters
    ----------
    snapshots : (dim, K) complex matrix, or (N, T[, K]) for 2-D smoothing.
    steering : callable mapping a grid value to a steering vector of the
        smoothed dimension, or a precomputed ``(dim, G)`` matrix.
    model_order : signal-subspace dimension ``L``.
    smoothing_window : int or ``(wn, wt)``; ``None`` uses the snapshots as given.
    grid : parameter values; required when ``steering`` is callable.
    """
    X = np.asarray(snapshots, dtype=complex)
    if smoothing_window is not None:
        X = hankel_snapshots(X, smoothing_window)
    elif X.ndim == 1:
        X = X[:, None]
    En, _ = noise_subspace(X, model_order)
    if callable(steering):
        A = np.stack([np.asarray(steering(g), dtype=complex) for g in grid], axis=1)
    else:
        A = np.asarray(steering, dtype=complex)
    if A.shape[0] != X.shape[0]:
        raise ValueError("steering dimension does not match smoothed snapshots")
    return music_pseudospectrum(En, A)


def exp_steering(freqs: np.ndarray, length: int, step: float) -> np.ndarray:
    """Columns ``e^{j2pi f k step}``, ``k = 0..length-1``."""
    k = np.arange(length)[:, None]
    return np.exp(2j * np.pi * np.asarray(freqs)[None, :] * k * step)


def mirror_basis(a: np.ndarray) -> np.ndarray:
    """``a + reverse(a)`` over the flattened sample order, reshaped like ``a``."""
    a = np.asarray(a)
    flat = a.reshape(-1)
    return (flat + flat[::-1]).reshape(a.shape)


def _parabolic_offset(ym: float, y0: float, yp: float) -> float:
    den = ym - 2 * y0 + yp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))


def peak_extract(spectrum: Spectrum2D, max_peaks: int = 8, rel_threshold: float = 0.5) -> PeakSet:
    """Strict local maxima above ``rel_threshold * max``, parabolically refined per axis.

    Axes of length one are ignored when testing for local maxima. Ties in
    magnitude go to the lower delay index, then the lower Doppler index.
    """
    if not 0 < rel_threshold <= 1:
        raise ValueError("rel_threshold must lie in (0, 1]")
    V = np.asarray(spectrum.values, float)
    gmax = V.max() if V.size else 0.0
    if gmax <= 0:
        return PeakSet()
    P = np.pad(V, 1, constant_values=-np.inf)
    is_peak = np.ones_like(V, dtype=bool)
    rows, cols = V.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if (di, dj) == (0, 0) or (di and rows == 1) or (dj and cols == 1):
                continue
            is_peak &= V > P[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
    is_peak &= V >= rel_threshold * gmax
    ii, jj = np.nonzero(is_peak)
    order = np.lexsort((jj, ii, -V[ii, jj]))
    peaks = []
    for k in order[:max_peaks]:
        i, j = ii[k], jj[k]
        di = dj = 0.0
        if 0 < i < rows - 1:
            di = _parabolic_offset(V[i - 1, j], V[i, j], V[i + 1, j])
        if 0 < j < cols - 1:
            dj = _parabolic_offset(V[i, j - 1], V[i, j], V[i, j + 1])
        d_step = spectrum.delay_axis[1] - spectrum.delay_axis[0] if rows > 1 else 0.0
        f_step = spectrum.doppler_axis[1] - spectrum.doppler_axis[0] if cols > 1 else 0.0
        peaks.append(Peak(float(spectrum.delay_axis[i] + di * d_step),
                          float(spectrum.doppler_axis[j] + dj * f_step),
                          float(V[i, j])))
    return PeakSet(peaks)


def peak_extract_1d(axis: np.ndarray, values: np.ndarray, max_peaks: int = 8,
                    rel_threshold: float = 0.5) -> PeakSet:
    """Peaks of a Doppler-only spectrum (delay reported as 0)."""
    spec = Spectrum2D(np.asarray(values, float)[None, :], np.zeros(1), np.asarray(axis, float))
    return peak_extract(spec, max_peaks, rel_threshold)


def rmse(estimates, truths) -> float:
    e = np.asarray(estimates, float)
    t = np.asarray(truths, float)
    if e.shape != t.shape:
        raise ValueError("length mismatch between estimates and truths")
    return float(np.sqrt(np.mean((e - t) ** 2)))
