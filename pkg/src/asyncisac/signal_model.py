"""CSI synthesis for an OFDM link whose transmitter and receiver clocks are not locked.

The CSI of subcarrier ``n``, block ``t``, receive antenna ``p`` and transmit
antenna ``q`` is

    H(n,t,p,q) = e^{j phi_t} sum_l b_l e^{-j2pi(tau_l + tau_o,t) n f0}
                 e^{j2pi(fD_l + f_o,t) t Ts} e^{j u_lpq}

where ``phi_t``, ``tau_o,t`` and ``f_o,t`` are the random phase, timing offset
(TMO) and carrier frequency offset (CFO) of block ``t``. Everything in this
module is a pure function of its inputs and a seed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

PHASE_MODES = ("perBlockUniform", "frozen")


@dataclass(frozen=True)
class OfdmGrid:
    """Sampling grid of the CSI tensor.

    Element spacings default to half a carrier wavelength.
    """

    num_subcarriers: int = 64
    subcarrier_spacing: float = 312.5e3
    block_period: float = 1e-3
    num_rx: int = 2
    num_tx: int = 1
    carrier_frequency: float = 5.8e9
    rx_spacing: float | None = None
    tx_spacing: float | None = None

    def __post_init__(self):
        if self.num_subcarriers < 1 or self.num_rx < 1 or self.num_tx < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.subcarrier_spacing <= 0 or self.block_period <= 0 or self.carrier_frequency <= 0:
            raise ValueError("subcarrier spacing, block period and carrier must be positive")
        half = self.wavelength / 2
        if self.rx_spacing is None:
            object.__setattr__(self, "rx_spacing", half)
        if self.tx_spacing is None:
            object.__setattr__(self, "tx_spacing", half)
        for name in ("rx_spacing", "tx_spacing"):
            if getattr(self, name) > half * (1 + 1e-12):
                warnings.warn(f"{name} exceeds half a wavelength; spatial aliasing possible", stacklevel=3)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency


@dataclass(frozen=True)
class Path:
    """One propagation path.

    ``doppler_track`` optionally gives a per-block Doppler (Hz); the phase is
    then integrated block by block and the delay follows the implied change in
    path length.
    """

    delay: float
    doppler: float = 0.0
    amplitude: complex = 1.0
    aoa: float = 0.0
    aod: float = 0.0
    is_los: bool = False
    doppler_track: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be non-negative")
        if not np.isfinite(self.amplitude):
            raise ValueError("path amplitude must be finite")
        for ang in (self.aoa, self.aod):
            if abs(ang) > np.pi / 2 + 1e-12:
                raise ValueError("aoa/aod must lie in [-pi/2, pi/2]")


@dataclass(frozen=True)
class ClockState:
    random_phase: float = 0.0
    tmo: float = 0.0
    cfo: float = 0.0
    stability_ppm: float = 20.0
    phase_mode: str = "perBlockUniform"

    def __post_init__(self):
        if self.stability_ppm < 0:
            raise ValueError("stability_ppm must be >= 0")
        if not 0 <= self.random_phase < 2 * np.pi:
            raise ValueError("random_phase must lie in [0, 2pi)")
        if self.phase_mode not in PHASE_MODES:
            raise ValueError(f"phase_mode must be one of {PHASE_MODES}")


@dataclass(frozen=True)
class Reflector:
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    reflectivity: complex = 1.0


@dataclass(frozen=True)
class Scenario:
    """Planar bistatic geometry.

    Array broadsides are global angles of the array normals; ``None`` points
    the receive array at the transmitter and vice versa.
    """

    tx_position: tuple[float, float]
    rx_position: tuple[float, float]
    reflectors: tuple[Reflector, ...] = ()
    los_blocked: bool = False
    seed: int = 0
    rx_broadside: float | None = None
    tx_broadside: float | None = None

    def __post_init__(self):
        if np.allclose(self.tx_position, self.rx_position):
            raise ValueError("tx and rx positions must differ")
        for r in self.reflectors:
            if not np.isfinite(r.reflectivity):
                raise ValueError("reflectivity must be finite")


@dataclass(frozen=True)
class CsiTensor:
    """Complex CSI indexed ``(n, t, p, q)``; immutable after synthesis."""

    data: np.ndarray
    grid: OfdmGrid
    clock_mode: str = "perBlockUniform"

    def __post_init__(self):
        d = self.data
        g = self.grid
        if d.ndim != 4 or d.shape[0] != g.num_subcarriers or d.shape[2] != g.num_rx or d.shape[3] != g.num_tx:
            raise ValueError(f"data shape {d.shape} does not match grid")
        if not np.all(np.isfinite(d)):
            raise ValueError("CSI contains non-finite entries")
        d.setflags(write=False)

    @property
    def num_blocks(self) -> int:
        return self.data.shape[1]

    def to_csv(self, path) -> None:
        write_tensor_csv(self.data, path)


def write_tensor_csv(data: np.ndarray, path) -> None:
    """Write a 4-D complex array as rows ``n,t,p,q,re,im``."""
    idx = np.indices(data.shape).reshape(4, -1).T
    flat = data.reshape(-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t", "p", "q", "re", "im"])
        for (n, t, p, q), v in zip(idx, flat):
            w.writerow([n, t, p, q, repr(float(v.real)), repr(float(v.imag))])


def read_tensor_csv(path, shape=None) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = rows[:, :4].astype(int)
    if shape is None:
        shape = tuple(ids.max(axis=0) + 1)
    out = np.zeros(shape, dtype=complex)
    out[tuple(ids.T)] = rows[:, 4] + 1j * rows[:, 5]
    return out


def steering_phase(path: Path, p: int, q: int, grid: OfdmGrid) -> float:
    """Phase ``u_lpq`` of a uniform linear array at both ends (radians)."""
    if not (0 <= p < grid.num_rx and 0 <= q < grid.num_tx):
        raise IndexError("antenna index outside grid")
    lam = grid.wavelength
    return (2 * np.pi * grid.rx_spacing / lam * p * np.sin(path.aoa)
            + 2 * np.pi * grid.tx_spacing / lam * q * np.sin(path.aod))


def _steering_matrix(path: Path, grid: OfdmGrid) -> np.ndarray:
    lam = grid.wavelength
    p = np.arange(grid.num_rx)[:, None]
    q = np.arange(grid.num_tx)[None, :]
    u = (2 * np.pi * grid.rx_spacing / lam * p * np.sin(path.aoa)
         + 2 * np.pi * grid.tx_spacing / lam * q * np.sin(path.aod))
    return np.exp(1j * u)


def max_cfo(stability_ppm: float, carrier_frequency: float) -> float:
    """Largest CFO magnitude (Hz) a clock of the given stability can produce."""
    return stability_ppm * 1e-6 * carrier_frequency


def evolve_clock(state: ClockState, dt: float, rng: np.random.Generator,
                 carrier_frequency: float = 5.8e9, cfo_walk_scale: float = 1.0,
                 ref_interval: float = 1.0) -> ClockState:
    """Advance the clock state by ``dt`` seconds as a bounded random walk.

    The TMO moves by at most ``ppm*1e-6*dt``; the CFO moves by at most
    ``ppm*1e-6*fc*cfo_walk_scale*dt/ref_interval``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ppm = state.stability_ppm * 1e-6
    tmo_bound = ppm * dt
    cfo_bound = ppm * carrier_frequency * cfo_walk_scale * dt / ref_interval
    tmo = state.tmo + rng.uniform(-tmo_bound, tmo_bound)
    cfo = state.cfo + rng.uniform(-cfo_bound, cfo_bound)
    phase = state.random_phase
    if state.phase_mode == "perBlockUniform":
        phase = rng.uniform(0.0, 2 * np.pi)
    return replace(state, tmo=tmo, cfo=cfo, random_phase=phase)


def random_clock_state(rng: np.random.Generator, stability_ppm: float = 20.0,
                       carrier_frequency: float = 5.8e9, max_tmo: float = 1e-6,
                       phase_mode: str = "perBlockUniform") -> ClockState:
    """Draw an initial clock state: uniform TMO in ``[0, max_tmo]``, CFO within the ppm bound."""
    f = max_cfo(stability_ppm, carrier_frequency)
    return ClockState(random_phase=rng.uniform(0.0, 2 * np.pi),
                      tmo=rng.uniform(0.0, max_tmo),
                      cfo=rng.uniform(-f, f),
                      stability_ppm=stability_ppm,
                      phase_mode=phase_mode)


def clock_trace(num_blocks: int, grid: OfdmGrid, rng: np.random.Generator,
                initial: ClockState | None = None, cfo_walk_scale: float = 1.0,
                **initial_kw) -> list[ClockState]:
    """Per-block clock states, block 0 being ``initial`` (drawn if not given)."""
    state = initial if initial is not None else random_clock_state(
        rng, carrier_frequency=grid.carrier_frequency, **initial_kw)
    trace = [state]
    for _ in range(num_blocks - 1):
        state = evolve_clock(state, grid.block_period, rng, grid.carrier_frequency, cfo_walk_scale)
        trace.append(state)
    return trace


def frozen_trace(num_blocks: int, state: ClockState | None = None) -> list[ClockState]:
    """A trace whose every block shares one clock state."""
    state = state if state is not None else ClockState(phase_mode="frozen", stability_ppm=0.0)
    return [state] * num_blocks


def _angle_from_broadside(direction: np.ndarray, broadside: float) -> float:
    ang = np.arctan2(direction[1], direction[0]) - broadside
    ang = (ang + np.pi) % (2 * np.pi) - np.pi
    # a ULA cannot tell front from back: fold onto [-pi/2, pi/2]
    if ang > np.pi / 2:
        ang = np.pi - ang
    elif ang < -np.pi / 2:
        ang = -np.pi - ang
    return float(ang)


def geometry_to_paths(scenario: Scenario, grid: OfdmGrid) -> list[Path]:
    """Turn a planar scene into paths: LOS first (unless blocked), then one per reflector.

    Amplitudes follow free-space decay (``1/d`` for LOS, ``refl/(d_tx d_rx)``
    for reflections) times the carrier phase of the path length.
    """
    tx = np.asarray(scenario.tx_position, float)
    rx = np.asarray(scenario.rx_position, float)
    lam = grid.wavelength
    los_dir = tx - rx
    rx_bs = scenario.rx_broadside if scenario.rx_broadside is not None else float(np.arctan2(los_dir[1], los_dir[0]))
    tx_bs = scenario.tx_broadside if scenario.tx_broadside is not None else float(np.arctan2(-los_dir[1], -los_dir[0]))

    paths = []
    if not scenario.los_blocked:
        d = float(np.linalg.norm(los_dir))
        paths.append(Path(delay=d / SPEED_OF_LIGHT, doppler=0.0,
                          amplitude=np.exp(-2j * np.pi * d / lam) / d,
                          aoa=_angle_from_broadside(los_dir, rx_bs),
                          aod=_angle_from_broadside(-los_dir, tx_bs),
                          is_los=True))
    for refl in scenario.reflectors:
        x = np.asarray(refl.position, float)
        v = np.asarray(refl.velocity, float)
        d_tx = float(np.linalg.norm(x - tx))
        d_rx = float(np.linalg.norm(x - rx))
        if d_tx < 1e-9 or d_rx < 1e-9:
            raise ValueError("reflector coincides with tx or rx")
        length = d_tx + d_rx
        rate = float(np.dot((x - tx) / d_tx + (x - rx) / d_rx, v))
        paths.append(Path(delay=length / SPEED_OF_LIGHT, doppler=-rate / lam,
                          amplitude=refl.reflectivity * np.exp(-2j * np.pi * length / lam) / (d_tx * d_rx),
                          aoa=_angle_from_broadside(x - rx, rx_bs),
                          aod=_angle_from_broadside(x - tx, tx_bs)))
    return paths


def bistatic_length(tx, rx, x) -> float:
    x = np.asarray(x, float)
    return float(np.linalg.norm(x - np.asarray(tx, float)) + np.linalg.norm(x - np.asarray(rx, float)))


def _path_phases(path: Path, num_blocks: int, grid: OfdmGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-block Doppler phase and delay for one path."""
    t = np.arange(num_blocks)
    if path.doppler_track is None:
        return 2 * np.pi * path.doppler * t * grid.block_period, np.full(num_blocks, path.delay)
    track = np.asarray(path.doppler_track, float)
    if track.shape != (num_blocks,):
        raise ValueError("doppler_track must have one entry per block")
    cycles = np.concatenate([[0.0], np.cumsum(track[:-1])]) * grid.block_period
    delay = path.delay - cycles / grid.carrier_frequency
    return 2 * np.pi * cycles, delay


def synthesize_csi(paths: Sequence[Path], grid: OfdmGrid, clock_trace: Sequence[ClockState],
                   num_blocks: int | None = None, snr_db: float | None = None,
                   rng: np.random.Generator | int | None = None) -> CsiTensor:
    """Evaluate the asynchronous CSI model over the grid.

    Noise, when ``snr_db`` is given, is circularly-symmetric complex Gaussian
    with power set against the mean power of the noiseless tensor.
    """
    if not paths:
        raise ValueError("empty path list")
    T = len(clock_trace) if num_blocks is None else num_blocks
    if len(clock_trace) != T:
        raise ValueError("clock trace length must equal the number of blocks")

    n = np.arange(grid.num_subcarriers)[:, None]
    f0 = grid.subcarrier_spacing
    H = np.zeros((grid.num_subcarriers, T, grid.num_rx, grid.num_tx), dtype=complex)
    for path in paths:
        dop_phase, delay = _path_phases(path, T, grid)
        nt = np.exp(-2j * np.pi * delay[None, :] * n * f0 + 1j * dop_phase[None, :])
        H += path.amplitude * nt[:, :, None, None] * _steering_matrix(path, grid)[None, None]

    phi = np.array([s.random_phase for s in clock_trace])
    tmo = np.array([s.tmo for s in clock_trace])
    cfo = np.array([s.cfo for s in clock_trace])
    t = np.arange(T)
    common = np.exp(1j * phi[None, :] - 2j * np.pi * tmo[None, :] * n * f0
                    + 2j * np.pi * cfo[None, :] * t * grid.block_period)
    H *= common[:, :, None, None]

    if snr_db is not None:
        rng = np.random.default_rng(rng)
        H = H + complex_noise(H.shape, np.mean(np.abs(H) ** 2) / 10 ** (snr_db / 10), rng)

    # the common factor is constant over blocks only with identical states and no CFO
    frozen = all(s == clock_trace[0] for s in clock_trace) and clock_trace[0].cfo == 0.0
    return CsiTensor(H, grid, clock_mode="frozen" if frozen else "perBlockUniform")


def complex_noise(shape, power: float, rng: np.random.Generator) -> np.ndarray:
    scale = np.sqrt(power / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
