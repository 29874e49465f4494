"""Scenario builders shared by the module tests and the acceptance suite."""

import numpy as np

from asyncisac.networked import RruSet
from asyncisac.signal_model import OfdmGrid, Path, clock_trace, synthesize_csi

CASR_GRID = OfdmGrid(num_subcarriers=16, num_rx=2, block_period=0.01)


def arc_scenario(seed, fd=2.0, T=1000, snr_db=None):
    """LOS at broadside plus one dynamic path at a clearly different AoA."""
    rng = np.random.default_rng(seed)
    aoa = rng.choice([-1, 1]) * rng.uniform(0.3, 1.2)
    paths = [Path(30e-9, 0, 1.0, aoa=0.0, is_los=True),
             Path(80e-9, fd, 0.5 * np.exp(2j * np.pi * rng.random()), aoa=aoa)]
    return synthesize_csi(paths, CASR_GRID, clock_trace(T, CASR_GRID, rng), snr_db=snr_db, rng=rng)


def tdoa_geometry(seed):
    """Four RRUs jittered around a 10 m circle, tx outside it, target inside."""
    rng = np.random.default_rng(seed)
    ang = 2 * np.pi * np.arange(4) / 4 + rng.uniform(-0.4, 0.4, 4)
    rad = 10 * rng.uniform(0.8, 1.2, 4)
    rrus = RruSet(np.c_[rad * np.cos(ang), rad * np.sin(ang)])
    phi = rng.uniform(0, 2 * np.pi)
    tx = 12 * np.array([np.cos(phi), np.sin(phi)])
    target = rng.uniform(-5, 5, 2)
    d = rng.normal(size=2)
    init = target + 5 * d / np.linalg.norm(d)
    return rrus, tx, target, init


SQUARE = RruSet(np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float))
SQUARE_TX = np.array([-2.0, 5.0])


def em_scenario(seed):
    rng = np.random.default_rng(seed)
    target = rng.uniform(2, 8, 2)
    init = target + rng.normal(0, 1, 2)
    return rng, target, init
