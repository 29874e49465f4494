"""Cooperative localization with several receivers (RRUs).

Time differences cancel an offset common to all receivers. Angles of arrival
need no timing at all. When every receiver has its own drifting offset, the
offsets are treated as latent Gaussian random walks and integrated out by EM.

Internally everything runs in meters (times multiplied by the speed of
light) for conditioning; the public interface takes and returns seconds.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

C = 299_792_458.0


class GeometryWarning(UserWarning):
    pass


class GeometryError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, position=None):
        super().__init__(msg)
        self.position = position


@dataclass(frozen=True)
class RruSet:
    positions: np.ndarray
    synchronized: bool = True

    def __post_init__(self):
        P = np.asarray(self.positions, dtype=float)
        if P.ndim != 2 or P.shape[1] != 2:
            raise ValueError("positions must be an (M, 2) array")
        if len(np.unique(P, axis=0)) < 2:
            raise ValueError("need at least two distinct RRU positions")
        object.__setattr__(self, "positions", P)

    def __len__(self):
        return len(self.positions)

    @property
    def collinear(self) -> bool:
        P = self.positions - self.positions.mean(axis=0)
        s = np.linalg.svd(P, compute_uv=False)
        return bool(s[-1] <= 1e-9 * max(s[0], 1e-300))


@dataclass(frozen=True)
class ToaFrame:
    """TOAs in seconds, shape ``(slots, rrus)``.

    ``offsets`` keeps the simulated truth of the per-(slot, RRU) offset and
    is never read by the solvers.
    """

    toas: np.ndarray
    offsets: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.toas, dtype=float))
        if not np.all(np.isfinite(T)):
            raise ValueError("TOAs must be finite")
        object.__setattr__(self, "toas", T)

    @property
    def num_slots(self) -> int:
        return self.toas.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "rru", "toa"])
            for t, row in enumerate(self.toas):
                for i, v in enumerate(row):
                    w.writerow([t, i, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "ToaFrame":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        S = max(int(r["slot"]) for r in rows) + 1
        M = max(int(r["rru"]) for r in rows) + 1
        T = np.full((S, M), np.nan)
        for r in rows:
            T[int(r["slot"]), int(r["rru"])] = float(r["toa"])
        return cls(T)


@dataclass(frozen=True)
class EmModel:
    offset_walk_sigma: float
    toa_noise_sigma: float
    prior_position_mean: np.ndarray | None = None
    prior_position_cov: np.ndarray | None = None
    offset_init_sigma: float = 0.0

    def __post_init__(self):
        if min(self.offset_walk_sigma, self.offset_init_sigma) < 0:
            raise ValueError("sigmas must be non-negative")
        if not self.toa_noise_sigma > 0:
            raise ValueError("toa_noise_sigma must be positive")
        if self.prior_position_cov is not None:
            P = np.asarray(self.prior_position_cov, dtype=float)
            if P.shape != (2, 2) or np.any(np.linalg.eigvalsh((P + P.T) / 2) <= 0):
                raise ValueError("prior covariance must be 2x2 positive definite")


def bistatic_range(x, tx, rrus) -> np.ndarray:
    """``|tx - x| + |x - rru_i|`` for positions ``x`` of shape ``(..., 2)``."""
    x = np.asarray(x, dtype=float)
    d_tx = np.linalg.norm(x - np.asarray(tx, float), axis=-1)
    d_rx = np.linalg.norm(x[..., None, :] - np.asarray(rrus, float), axis=-1)
    return d_tx[..., None] + d_rx


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def _range_jacobian(x, tx, rrus):
    return _unit(x - tx)[None, :] + _unit(x[None, :] - rrus)


def simulate_toas(rrus: RruSet, tx, trajectory, rng: np.random.Generator,
                  toa_sigma: float = 0.0, walk_sigma: float = 0.0,
                  common_sigma: float = 0.0, init_sigma: float = 0.0) -> ToaFrame:
    """TOAs for a target trajectory ``(T, 2)``.

    Per-RRU offsets start at ``N(0, init_sigma^2)`` and take a Gaussian step of
    ``walk_sigma`` every slot, the first slot included. ``common_sigma`` adds
    a per-slot offset shared by all RRUs (the transmitter clock).
    """
    X = np.atleast_2d(np.asarray(trajectory, dtype=float))
    T, M = len(X), len(rrus)
    toa = bistatic_range(X, tx, rrus.positions) / C
    off = rng.normal(0.0, init_sigma, (1, M)) + np.cumsum(rng.normal(0.0, walk_sigma, (T, M)), axis=0) \
        if (walk_sigma > 0 or init_sigma > 0) else np.zeros((T, M))
    common = rng.normal(0.0, common_sigma, (T, 1)) if common_sigma > 0 else np.zeros((T, 1))
    noise = rng.normal(0.0, toa_sigma, (T, M)) if toa_sigma > 0 else 0.0
    return ToaFrame(toa + off + common + noise, off + common)


def toa_to_tdoa(frame: ToaFrame, ref_rru: int = 0, rrus: RruSet | None = None) -> np.ndarray:
    """``toa_i - toa_ref`` for every slot, reference column removed: ``(T, M-1)``."""
    M = frame.toas.shape[1]
    if rrus is not None and not rrus.synchronized:
        raise ValueError("TDOA requires synchronized RRUs")
    if M < 2:
        raise ValueError("need at least two RRUs")
    if not 0 <= ref_rru < M:
        raise IndexError("reference RRU out of range")
    d = frame.toas - frame.toas[:, [ref_rru]]
    return np.delete(d, ref_rru, axis=1)


@dataclass(frozen=True)
class SolveResult:
    position: np.ndarray
    iterations: int
    residual: float
    trace: tuple = ()


def _gauss_newton(resid_jac, x0, max_iter=100, tol=1e-9, prior=None):
    """Damped Gauss-Newton on ``0.5 * |r(x)|^2`` (+ optional quadratic prior).

    Returns ``(x, iterations, cost, trace)``; raises ``GeometryError`` on a
    singular normal matrix and ``ConvergenceError`` after ``max_iter``.
    """
    def cost(x):
        r, _ = resid_jac(x)
        c = 0.5 * float(r @ r)
        if prior is not None:
            mu, Pinv = prior
            d = x - mu
            c += 0.5 * float(d @ Pinv @ d)
        return c

    x = np.asarray(x0, dtype=float).copy()
    f = cost(x)
    trace = [f]
    for it in range(1, max_iter + 1):
        r, J = resid_jac(x)
        A = J.T @ J
        g = J.T @ r
        if prior is not None:
            mu, Pinv = prior
            A = A + Pinv
            g = g + Pinv @ (x - mu)
        if np.linalg.cond(A) > 1e12:
            raise GeometryError("singular Jacobian: degenerate geometry")
        step = -np.linalg.solve(A, g)
        lam = 1.0
        while True:
            xn = x + lam * step
            fn = cost(xn)
            if fn <= f or lam * np.linalg.norm(step) < tol:
                break
            lam *= 0.5
        moved = lam * np.linalg.norm(step)
        gain = f - fn
        if fn <= f:
            x, f = xn, fn
        trace.append(f)
        # stagnation at the floating-point floor counts as converged
        if moved < tol or 0 <= gain <= 1e-15 * f:
            return x, it, f, trace
    raise ConvergenceError(f"no convergence in {max_iter} iterations", x)


def _check_target(x, tx, rrus):
    if np.linalg.norm(x - tx) < 1e-6:
        warnings.warn("solution coincides with the transmitter (degenerate bistatic geometry)",
                      GeometryWarning, stacklevel=3)
    if np.min(np.linalg.norm(rrus - x, axis=1)) < 1e-6:
        warnings.warn("solution coincides with an RRU", GeometryWarning, stacklevel=3)


def solve_tdoa(tdoas, rrus: RruSet, tx_pos, init, ref_rru: int = 0,
               max_iter: int = 100, tol: float = 1e-9) -> SolveResult:
    """Target position from ``M-1`` bistatic TDOAs (seconds) by damped Gauss-Newton.

    Residual ``r_i(x) = (range_i(x) - range_ref(x)) / c - tdoa_i`` where
    ``range`` is the Tx-target-RRU path length. Returned ``residual`` is the
    RMS of ``r`` in seconds.
    """
    if not rrus.synchronized:
        raise ValueError("TDOA requires synchronized RRUs")
    P = rrus.positions
    M = len(P)
    if M < 3:
        raise ValueError("need at least three RRUs")
    if rrus.collinear:
        warnings.warn("RRUs are collinear; mirror ambiguity", GeometryWarning, stacklevel=2)
    tx = np.asarray(tx_pos, dtype=float)
    others = [i for i in range(M) if i != ref_rru]
    d = np.asarray(tdoas, dtype=float).ravel() * C
    if d.size != M - 1:
        raise ValueError("expected one TDOA per non-reference RRU")

    def rj(x):
        rng_ = bistatic_range(x, tx, P)
        J = _range_jacobian(x, tx, P)
        return rng_[others] - rng_[ref_rru] - d, J[others] - J[ref_rru]

    x, it, f, trace = _gauss_newton(rj, init, max_iter, tol)
    _check_target(x, tx, P)
    return SolveResult(x, it, float(np.sqrt(2 * f / (M - 1))) / C, tuple(np.sqrt(2 * np.array(trace) / (M - 1)) / C))


def solve_aoa(pos_u, pos_v, angle_a: float, angle_b: float, side: int = 1) -> np.ndarray:
    """Apex ``X`` of triangle ``XUV`` from interior angles ``a`` at U and ``b`` at V.

    ``side=+1`` places X to the left of the directed segment U->V, ``-1`` to
    the right.
    """
    U = np.asarray(pos_u, dtype=float)
    V = np.asarray(pos_v, dtype=float)
    if not (angle_a > 0 and angle_b > 0):
        raise ValueError("angles must be positive")
    if angle_a + angle_b >= np.pi:
        raise GeometryError("a + b >= pi: rays do not intersect")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    uv = V - U
    base = np.linalg.norm(uv)
    if base == 0:
        raise GeometryError("U and V coincide")
    ux = base * np.sin(angle_b) / np.sin(angle_a + angle_b)
    phi = np.arctan2(uv[1], uv[0]) + side * angle_a
    return U + ux * np.array([np.cos(phi), np.sin(phi)])


def interior_angles(pos_u, pos_v, x) -> tuple[float, float]:
    """Forward model of :func:`solve_aoa`."""
    U, V, X = (np.asarray(p, dtype=float) for p in (pos_u, pos_v, x))

    def ang(o, p, q):
        a, b = p - o, q - o
        return float(np.arctan2(abs(a[0] * b[1] - a[1] * b[0]), a @ b))

    return ang(U, V, X), ang(V, U, X)


def toa_ls(frame: ToaFrame, rrus: RruSet, tx_pos, init, static: bool = True) -> np.ndarray:
    """Least-squares position from TOAs, ignoring any clock offset.

    Returns ``(2,)`` when ``static`` else ``(T, 2)``. Uses a trust-region
    solver because large offset-induced residuals make plain Gauss-Newton
    zig-zag.
    """
    tx = np.asarray(tx_pos, dtype=float)
    P = rrus.positions
    Y = frame.toas * C

    def solve(y):
        sol = least_squares(lambda x: (bistatic_range(x, tx, P)[None, :] - y).ravel(),
                            np.asarray(init, dtype=float),
                            jac=lambda x: np.tile(_range_jacobian(x, tx, P), (len(y), 1)),
                            xtol=1e-12, ftol=1e-15, gtol=1e-15)
        return sol.x

    if static:
        return solve(Y)
    return np.array([solve(y[None, :]) for y in Y])


# ---------------------------------------------------------------- EM --------

def _rw_filter(Z, q, r, p0):
    """Scalar random-walk Kalman filter, vectorized over columns of ``Z`` (T, M).

    State ``d_t = d_{t-1} + w`` with ``Var w = q``; ``Var d_1 = p0 + q``;
    observation ``z_t = d_t + e``, ``Var e = r``. Gains are shared by all
    columns because the model is the same for every RRU.
    """
    T = Z.shape[0]
    mf = np.zeros_like(Z)
    Pf = np.zeros(T)
    Pp = np.zeros(T)
    S = np.zeros(T)
    innov = np.zeros_like(Z)
    m = np.zeros(Z.shape[1])
    P = p0
    for t in range(T):
        Pp[t] = P + q
        S[t] = Pp[t] + r
        K = Pp[t] / S[t]
        innov[t] = Z[t] - m
        m = m + K * innov[t]
        P = (1 - K) * Pp[t]
        mf[t], Pf[t] = m, P
    return mf, Pf, Pp, S, innov


def rts_smoother(Z, q, r, p0=0.0):
    """Posterior mean ``(T, M)`` and variance ``(T,)`` of the offsets given ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    mf, Pf, Pp, _, _ = _rw_filter(Z, q, r, p0)
    T = len(Pf)
    ms, Ps = mf.copy(), Pf.copy()
    for t in range(T - 2, -1, -1):
        if Pp[t + 1] <= 0:
            ms[t], Ps[t] = mf[t], Pf[t]
            continue
        G = Pf[t] / Pp[t + 1]
        ms[t] = mf[t] + G * (ms[t + 1] - mf[t])
        Ps[t] = Pf[t] + G * G * (Ps[t + 1] - Pp[t + 1])
    if np.any(Ps < -1e-12 * max(r, 1e-300)) or not np.all(np.isfinite(Ps)):
        raise np.linalg.LinAlgError("singular smoother covariance")
    return ms, np.maximum(Ps, 0.0)


def rw_loglik(Z, q, r, p0=0.0) -> float:
    """Marginal Gaussian log-density of ``Z`` (T, M) under the random-walk model."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    _, _, _, S, innov = _rw_filter(Z, q, r, p0)
    M = Z.shape[1]
    return float(-0.5 * (M * np.sum(np.log(2 * np.pi * S)) + np.sum(innov ** 2 / S[:, None])))


def rw_covariance(T: int, q: float, r: float, p0: float = 0.0) -> np.ndarray:
    """Dense covariance of one RRU's observations, for cross-checks."""
    t = np.arange(1, T + 1)
    return p0 + q * np.minimum.outer(t, t) + r * np.eye(T)


@dataclass(frozen=True)
class EmResult:
    trajectory: np.ndarray
    offset_mean: np.ndarray
    offset_var: np.ndarray
    loglik: np.ndarray
    iterations: int
    converged: bool

    @property
    def position(self) -> np.ndarray:
        return self.trajectory.mean(axis=0)

    def trace_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loglik"])
            for i, v in enumerate(self.loglik):
                w.writerow([i, repr(float(v))])


def em_localize(frame: ToaFrame, rrus: RruSet, tx_pos, model: EmModel, init,
                static: bool = True, max_iter: int = 200, tol: float = 1e-9,
                m_steps: int = 5) -> EmResult:
    """EM over latent per-RRU offset random walks.

    E-step: RTS smoother of ``toa - range(x)/c`` per RRU. M-step: a few damped
    Gauss-Newton steps on the expected complete-data log-likelihood, one
    shared position (``static``) or one per slot. The line search never lets
    the M-step objective drop, so the marginal log-likelihood (reported in
    ``loglik``, TOAs in seconds, including the position prior) cannot
    decrease.
    """
    if len(rrus) < 2:
        raise ValueError("need at least two RRUs")
    Y = frame.toas * C
    T, M = Y.shape
    if M != len(rrus):
        raise ValueError("frame and RRU set disagree on the number of RRUs")
    tx = np.asarray(tx_pos, dtype=float)
    P = rrus.positions
    q = (model.offset_walk_sigma * C) ** 2
    r = (model.toa_noise_sigma * C) ** 2
    p0 = (model.offset_init_sigma * C) ** 2
    prior = None
    if model.prior_position_mean is not None and model.prior_position_cov is not None:
        prior = (np.asarray(model.prior_position_mean, float), np.linalg.inv(np.asarray(model.prior_position_cov, float)))
    unit_shift = T * M * np.log(C)  # density of seconds vs meters

    X0 = np.asarray(init, dtype=float)
    if X0.shape not in ((2,), (T, 2)):
        raise ValueError("init must be a point or one point per slot")
    X = np.broadcast_to(X0, (T, 2)).copy()
    if static:
        X[:] = X.mean(axis=0)

    def loglik(X):
        Z = Y - bistatic_range(X, tx, P)
        ll = rw_loglik(Z, q, r, p0) + unit_shift
        if prior is not None:
            mu, Pinv = prior
            d = X[:1] if static else X
            ll += float(np.sum(-0.5 * np.einsum("ti,ij,tj->t", d - mu, Pinv, d - mu)))
            ll += d.shape[0] * (-np.log(2 * np.pi) + 0.5 * np.log(np.linalg.det(Pinv)))
        if not np.isfinite(ll):
            raise FloatingPointError("non-finite log-likelihood")
        return ll

    sr = np.sqrt(r)
    trace = [loglik(X)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Z = Y - bistatic_range(X, tx, P)
        ms, _ = rts_smoother(Z, q, r, p0)
        W = (Y - ms) / sr
        if static:
            def rj(x):
                res = (bistatic_range(x, tx, P)[None, :] / sr - W).ravel()
                return res, np.tile(_range_jacobian(x, tx, P) / sr, (T, 1))
            x, *_ = _m_step(rj, X[0], m_steps, prior)
            Xn = np.tile(x, (T, 1))
        else:
            Xn = np.empty_like(X)
            for t in range(T):
                def rj(x, w=W[t]):
                    return bistatic_range(x, tx, P) / sr - w, _range_jacobian(x, tx, P) / sr
                Xn[t], *_ = _m_step(rj, X[t], m_steps, prior)
        ll = loglik(Xn)
        X = Xn
        trace.append(ll)
        if ll - trace[-2] < tol:
            converged = True
            break
    Z = Y - bistatic_range(X, tx, P)
    ms, Ps = rts_smoother(Z, q, r, p0)
    return EmResult(X, ms / C, Ps / C ** 2, np.array(trace), it, converged)


def _m_step(rj, x0, steps, prior):
    try:
        return _gauss_newton(rj, x0, steps, 1e-12, prior)
    except ConvergenceError as e:
        # a partial M-step still raises the objective (generalized EM)
        return (e.position,)
