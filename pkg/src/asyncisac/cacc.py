"""Cross-antenna cross-correlation (CACC).

Multiplying every antenna's CSI by the conjugate of a reference antenna cancels
the random phase, TMO and CFO, which are common to all receive chains. The
price is a bilinear output: every pair of paths contributes a term at the
relative delay/Doppler and a conjugate image at the negated parameters. The
functions here remove the static part, suppress or resolve the images, and
estimate relative delay and Doppler.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import firwin

from .estimators import (Peak, PeakSet, Spectrum2D, exp_steering, hankel_snapshots,
                         music_pseudospectrum, noise_subspace, peak_extract, peak_extract_1d,
                         periodogram_2d)
from .signal_model import CsiTensor, OfdmGrid


class DegenerateLosError(ValueError):
    """The static (LOS) term is too weak to divide by."""


@dataclass(frozen=True)
class CaccTensor:
    """Cross-products ``X(n, t, p, q)`` against ``ref_antenna``.

    The reference slot holds ``|H_ref|^2``. ``t_offset`` is the source block
    index of ``data[:, 0]`` (non-zero after filtering).
    """

    data: np.ndarray
    ref_antenna: int
    grid: OfdmGrid
    t_offset: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite cross-products")
        if not 0 <= self.ref_antenna < self.data.shape[2]:
            raise ValueError("reference antenna out of range")

    @property
    def others(self) -> list[int]:
        return [p for p in range(self.data.shape[2]) if p != self.ref_antenna]

    def slice(self, p: int | None = None, q: int = 0) -> np.ndarray:
        p = self.others[0] if p is None else p
        return self.data[:, :, p, q]


def _check_antennas(csi: CsiTensor, ref: int) -> None:
    if csi.grid.num_rx < 2:
        raise ValueError("cross-antenna processing needs at least two receive antennas")
    if not 0 <= ref < csi.grid.num_rx:
        raise ValueError("reference antenna out of range")


def cross_correlate(csi: CsiTensor, ref_antenna: int = 0) -> CaccTensor:
    """``X(n,t,p,q) = H(n,t,p,q) conj(H(n,t,ref,q))``."""
    _check_antennas(csi, ref_antenna)
    H = csi.data
    X = H * np.conj(H[:, :, ref_antenna:ref_antenna + 1, :])
    return CaccTensor(X, ref_antenna, csi.grid)


def default_add_minus_constants(csi: CsiTensor, ref_antenna: int = 0, alpha_scale: float = 1.0,
                                beta_scale: float = 0.5) -> tuple[float, np.ndarray]:
    """``alpha`` from the reference antenna RMS, ``beta`` per antenna from its own RMS."""
    H = csi.data
    rms = np.sqrt(np.mean(np.abs(H) ** 2, axis=(0, 1)))  # (P, Q)
    alpha = alpha_scale * rms[ref_antenna]
    beta = beta_scale * rms
    return alpha, beta


def add_minus(csi: CsiTensor, ref_antenna: int = 0, alpha=None, beta=None,
              alpha_scale: float = 1.0, beta_scale: float = 0.5) -> CaccTensor:
    """Add-minus preconditioning before cross-correlation.

    The constants are applied along each sample's own phase, i.e.
    ``H_ref <- (|H_ref| + alpha) e^{j arg H_ref}`` and
    ``H_p <- (|H_p| - beta) e^{j arg H_p}``, which keeps the output exactly
    free of the clock terms. The enlarged reference magnitude boosts the
    LOS-to-dynamic product with positive Doppler and the reduced magnitude of
    the other antennas shrinks its image.

    ``alpha``/``beta`` default to ``alpha_scale``/``beta_scale`` times the RMS
    magnitude of the reference/each antenna. ``alpha = beta = 0`` reproduces
    :func:`cross_correlate`.
    """
    _check_antennas(csi, ref_antenna)
    a_def, b_def = default_add_minus_constants(csi, ref_antenna, alpha_scale, beta_scale)
    alpha = a_def if alpha is None else np.broadcast_to(np.asarray(alpha, float), a_def.shape)
    beta = b_def if beta is None else np.broadcast_to(np.asarray(beta, float), b_def.shape)
    H = csi.data
    mag = np.abs(H)
    unit = np.divide(H, mag, out=np.ones_like(H), where=mag > 0)
    ref = (mag[:, :, ref_antenna] + alpha) * unit[:, :, ref_antenna]
    others = (mag - beta[None, None]) * unit
    X = others * np.conj(ref[:, :, None, :])
    X[:, :, ref_antenna] = np.abs(ref) ** 2
    return CaccTensor(X, ref_antenna, csi.grid)


def bandpass_taps(passband: tuple[float, float], taps: int, block_period: float) -> np.ndarray:
    """Hamming-windowed sinc bandpass over the block rate."""
    low, high = passband
    nyq = 0.5 / block_period
    if taps % 2 == 0:
        raise ValueError("taps must be odd")
    if not 0 <= low < high <= nyq:
        raise ValueError("passband must satisfy 0 <= low < high <= 1/(2 Ts)")
    fs = 1.0 / block_period
    if low == 0 and high >= nyq:
        h = np.zeros(taps)
        h[taps // 2] = 1.0
        return h
    if low == 0:
        return firwin(taps, high, window="hamming", fs=fs)
    if high >= nyq:
        return firwin(taps, low, window="hamming", pass_zero=False, fs=fs)
    return firwin(taps, [low, high], window="hamming", pass_zero=False, fs=fs)


def static_filter(x: CaccTensor, passband: tuple[float, float] = (5.0, 45.0), taps: int = 65) -> CaccTensor:
    """Bandpass every (n, p, q) series over blocks to drop the static cross-products.

    Only fully-overlapped outputs are kept, so the result is ``taps - 1``
    blocks shorter; ``t_offset`` advances by the group delay.
    """
    T = x.data.shape[1]
    if T < taps:
        raise ValueError(f"series of {T} blocks is shorter than the {taps}-tap filter")
    h = bandpass_taps(passband, taps, x.grid.block_period)
    # correlation with the reversed taps equals 'valid' convolution
    win = np.lib.stride_tricks.sliding_window_view(x.data, taps, axis=1)
    y = win @ h[::-1]
    return replace(x, data=np.ascontiguousarray(y), t_offset=x.t_offset + taps // 2)


def relative_spectrum(x: CaccTensor, p: int | None = None, q: int = 0, zero_pad: int = 4) -> Spectrum2D:
    """Delay-Doppler periodogram of one cross-product slice (relative parameters)."""
    return periodogram_2d(x.slice(p, q), x.grid, zero_pad)


def image_to_true_ratio(spectrum: Spectrum2D, delay: float, doppler: float) -> float:
    """Spectrum value at ``(-delay, -doppler)`` over the value at ``(delay, doppler)``."""
    true = spectrum.at(delay, doppler)
    return spectrum.at(-delay, -doppler) / true if true > 0 else np.inf


# -- mirrored MUSIC ----------------------------------------------------------

def _mirrored_snapshots(x: CaccTensor, window, ps, qs) -> np.ndarray:
    stack = np.stack([x.data[:, :, p, q] for p in ps for q in qs], axis=-1)
    S = hankel_snapshots(stack, window)
    return S + S[::-1]


def _signal_count(eigvals: np.ndarray, model_order: int, detect_ratio: float) -> int:
    noise = np.mean(eigvals[model_order:]) if len(eigvals) > model_order else 0.0
    if eigvals[0] <= 0:
        return 0
    if noise <= 0:
        return model_order
    return int(np.sum(eigvals[:model_order] > detect_ratio * noise))


def _mirrored_grid_spectrum(En: np.ndarray, window, grid: OfdmGrid, delay_grid, doppler_grid) -> np.ndarray:
    """Normalized mirrored pseudo-spectrum on a (delay, doppler) grid.

    Uses ``a = a_delay kron a_doppler`` so the projection factorizes.
    """
    wn, wt = window
    B_d = np.exp(-2j * np.pi * np.outer(np.arange(wn), delay_grid) * grid.subcarrier_spacing)
    B_f = np.exp(2j * np.pi * np.outer(np.arange(wt), doppler_grid) * grid.block_period)
    F = En.conj().reshape(wn, wt, -1)
    Fr = En[::-1].conj().reshape(wn, wt, -1)
    # En^H m = En^H a + rev(En)^H a
    G = F + Fr
    tmp = np.einsum("ijk,jb->ikb", G, B_f)
    proj = np.einsum("ikb,ia->akb", tmp, B_d)
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    # ||m||^2 = 2||a||^2 + 2 Re(a^H rev(a))
    ad = np.einsum("ia,ia->a", B_d.conj(), B_d[::-1])
    af = np.einsum("jb,jb->b", B_f.conj(), B_f[::-1])
    norm = 2 * wn * wt + 2 * np.real(np.outer(ad, af))
    floor = 1e-12 * wn * wt
    P = np.where(norm > floor, norm / np.maximum(denom, np.finfo(float).tiny), 0.0)
    return P


def _steering(delay: float, doppler: float, window, grid: OfdmGrid) -> np.ndarray:
    wn, wt = window
    ad = np.exp(-2j * np.pi * np.arange(wn) * delay * grid.subcarrier_spacing)
    af = np.exp(2j * np.pi * np.arange(wt) * doppler * grid.block_period)
    return np.kron(ad, af)


def _correlation(x: CaccTensor, ps, qs, delay: float, doppler: float) -> float:
    """Matched-filter magnitude of the unmirrored data at one parameter pair."""
    N, T = x.data.shape[:2]
    t = x.t_offset + np.arange(T)
    a = np.exp(-2j * np.pi * np.arange(N)[:, None] * delay * x.grid.subcarrier_spacing
               + 2j * np.pi * t[None, :] * doppler * x.grid.block_period)
    return float(sum(np.abs(np.vdot(a, x.data[:, :, p, q])) ** 2 for p in ps for q in qs))


@dataclass(frozen=True)
class MirroredMusicResult:
    peaks: PeakSet
    spectrum: Spectrum2D  # sign-resolved pseudo-spectrum
    eigenvalues: np.ndarray


def mirrored_music_full(x: CaccTensor, L: int, delay_grid=None, doppler_grid=None, window=(8, 32),
                        p=None, q=None, sign_rule: str = "delay", detect_ratio: float = 10.0,
                        rel_threshold: float = 0.05) -> MirroredMusicResult:
    """2-D MUSIC with mirrored data and steering vectors.

    Mirroring (``v + reverse(v)``) folds every ``+/-`` relative-parameter pair
    onto one vector, so ``L`` pairs span an ``L``-dimensional signal space and
    the pseudo-spectrum is symmetric about the origin. One member of each pair
    is kept:

    * ``"delay"``: the member with non-negative relative delay. With the LOS
      path as reference every reflected path is longer, so the true member
      has positive relative delay.
    * ``"correlation"``: the member whose steering vector correlates more with
      the unmirrored data. This only discriminates when the pair magnitudes
      differ, e.g. after :func:`add_minus`.

    Signal eigenvalues below ``detect_ratio`` times the mean noise eigenvalue
    are not reported.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if sign_rule not in ("delay", "correlation"):
        raise ValueError("sign_rule must be 'delay' or 'correlation'")
    grid = x.grid
    if delay_grid is None:
        delay_grid = np.linspace(-0.5, 0.5, 512, endpoint=False) / grid.subcarrier_spacing
    if doppler_grid is None:
        doppler_grid = np.linspace(-0.5, 0.5, 512, endpoint=False) / grid.block_period
    delay_grid = np.asarray(delay_grid, float)
    doppler_grid = np.asarray(doppler_grid, float)
    ps = x.others if p is None else [p]
    qs = range(x.data.shape[3]) if q is None else [q]

    S = _mirrored_snapshots(x, window, ps, qs)
    if S.shape[1] < L + 1:
        raise ValueError("insufficient snapshots after smoothing")
    # mirrored snapshots are reversal-symmetric and only span half the space
    En, eig = noise_subspace(S, L, warn=False)
    n_sig = _signal_count(eig[:(S.shape[0] + 1) // 2], L, detect_ratio)

    P = _mirrored_grid_spectrum(En, window, grid, delay_grid, doppler_grid)
    if sign_rule == "delay":
        P = np.where(delay_grid[:, None] >= 0, P, 0.0)
    spec = Spectrum2D(P, delay_grid, doppler_grid)
    if n_sig == 0:
        return MirroredMusicResult(PeakSet(), spec, eig)

    candidates = peak_extract(spec, max_peaks=4 * L + 4, rel_threshold=rel_threshold)
    chosen: list[Peak] = []
    cell = (abs(delay_grid[1] - delay_grid[0]) if len(delay_grid) > 1 else 0.0,
            abs(doppler_grid[1] - doppler_grid[0]) if len(doppler_grid) > 1 else 0.0)

    def near(a: Peak, d: float, f: float) -> bool:
        return abs(a.delay - d) <= 1.5 * cell[0] + 1e-15 and abs(a.doppler - f) <= 1.5 * cell[1] + 1e-12

    for pk in candidates:
        if any(near(c, pk.delay, pk.doppler) or near(c, -pk.delay, -pk.doppler) for c in chosen):
            continue
        if sign_rule == "correlation":
            keep = _correlation(x, ps, qs, pk.delay, pk.doppler)
            flip = _correlation(x, ps, qs, -pk.delay, -pk.doppler)
            if flip > keep:
                pk = Peak(-pk.delay, -pk.doppler, pk.magnitude)
        chosen.append(pk)
        if len(chosen) == n_sig:
            break

    if sign_rule == "correlation":
        # report the resolved spectrum: each kept member's mirror image zeroed
        keep_mask = np.ones_like(P, dtype=bool)
        for c in chosen:
            i = np.abs(delay_grid + c.delay) <= 1.5 * cell[0] + 1e-15
            j = np.abs(doppler_grid + c.doppler) <= 1.5 * cell[1] + 1e-12
            keep_mask[np.ix_(i, j)] = False
        spec = Spectrum2D(np.where(keep_mask, P, 0.0), delay_grid, doppler_grid)
    return MirroredMusicResult(PeakSet(chosen), spec, eig)


def mirrored_music(x: CaccTensor, L: int, delay_grid=None, doppler_grid=None, **kw) -> PeakSet:
    """Signed ``(relative delay, relative Doppler)`` estimates; see :func:`mirrored_music_full`."""
    return mirrored_music_full(x, L, delay_grid, doppler_grid, **kw).peaks


# -- DFS-style Doppler estimation --------------------------------------------

def dynamic_static_ratio(csi: CsiTensor, ref_antenna: int = 0, floor: float = 1e-9) -> np.ndarray:
    """Dynamic-to-static ratio series ``r(n, t, p, q)`` for ``p != ref``.

    The cross-product is normalized by the reference power,
    ``Y = X / |H_ref|^2 = H_p / H_ref``, its temporal mean ``s`` is taken as
    the static (LOS-dominated) part and ``r = (Y - s) / s``. Dividing by the
    reference power keeps only terms that rotate with ``+fD``, so no
    conjugate image appears.
    """
    x = cross_correlate(csi, ref_antenna)
    ref_pow = np.abs(csi.data[:, :, ref_antenna:ref_antenna + 1, :]) ** 2
    scale = np.sqrt(np.mean(ref_pow))
    if scale == 0 or np.any(ref_pow < (floor * scale) ** 2):
        raise DegenerateLosError("reference antenna power below numerical floor")
    Y = x.data / ref_pow
    s = Y.mean(axis=1, keepdims=True)
    if np.any(np.abs(s) < floor):
        raise DegenerateLosError("static component below numerical floor; LOS not dominant")
    r = (Y - s) / s
    return np.delete(r, ref_antenna, axis=2)


def doppler_music(series: np.ndarray, block_period: float, L: int = 1, window: int | None = None,
                  doppler_grid=None, detect_ratio: float = 10.0, power_floor: float = 1e-20,
                  rel_threshold: float = 0.05) -> PeakSet:
    """Doppler MUSIC over blocks; every leading index of ``series`` is a snapshot."""
    S = np.asarray(series, dtype=complex)
    S = S.reshape(-1, S.shape[-1]).T  # (T, K)
    T = S.shape[0]
    window = window or max(L + 1, T // 2)
    if doppler_grid is None:
        doppler_grid = np.linspace(-0.5, 0.5, 512, endpoint=False) / block_period
    doppler_grid = np.asarray(doppler_grid, float)
    if np.mean(np.abs(S) ** 2) <= power_floor:
        return PeakSet()
    X = hankel_snapshots(S, window)
    En, eig = noise_subspace(X, L)
    n_sig = _signal_count(eig, L, detect_ratio)
    if n_sig == 0:
        return PeakSet()
    P = music_pseudospectrum(En, exp_steering(doppler_grid, window, block_period))
    return PeakSet(peak_extract_1d(doppler_grid, P, max_peaks=n_sig, rel_threshold=rel_threshold))


def dfs_doppler(csi: CsiTensor, ref_antenna: int = 0, L: int = 1, window: int | None = None,
                doppler_grid=None, **kw) -> PeakSet:
    """Image-free Doppler estimates from the dynamic-to-static ratio (Doppler only)."""
    r = dynamic_static_ratio(csi, ref_antenna)
    series = np.moveaxis(r, 1, -1)  # (N, P-1, Q, T)
    return doppler_music(series, csi.grid.block_period, L, window, doppler_grid, **kw)


# -- per-block tracking -------------------------------------------------------

def _window_starts(T: int, window: int, hop: int) -> np.ndarray:
    if T < window:
        raise ValueError("series shorter than the tracking window")
    return np.arange(0, T - window + 1, hop)


def track_dfs(csi: CsiTensor, ref_antenna: int = 0, window: int = 16, hop: int = 1,
              smoothing: int | None = None, doppler_grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Raw sliding-window DFS Doppler estimates.

    Returns ``(center_block, doppler)``; windows without a detection give NaN.
    """
    r = np.moveaxis(dynamic_static_ratio(csi, ref_antenna), 1, -1)
    T = r.shape[-1]
    starts = _window_starts(T, window, hop)
    out = np.full(len(starts), np.nan)
    smoothing = smoothing or window // 2 + 1
    for k, s in enumerate(starts):
        pk = doppler_music(r[..., s:s + window], csi.grid.block_period, 1, smoothing, doppler_grid,
                           detect_ratio=1.0)
        if pk:
            out[k] = pk[0].doppler
    return starts + (window - 1) / 2, out


def track_spectrum_peak(x: CaccTensor, window: int = 16, hop: int = 1, p: int | None = None, q: int = 0,
                        zero_pad: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Raw sliding-window Doppler of the strongest relative-spectrum peak.

    Returns ``(center_block, doppler)`` with centers in source block indices.
    """
    data = x.slice(p, q)
    T = data.shape[1]
    starts = _window_starts(T, window, hop)
    out = np.empty(len(starts))
    for k, s in enumerate(starts):
        spec = periodogram_2d(data[:, s:s + window], x.grid, zero_pad)
        i, j = np.unravel_index(np.argmax(spec.values), spec.values.shape)
        out[k] = spec.doppler_axis[j]
    return x.t_offset + starts + (window - 1) / 2, out
