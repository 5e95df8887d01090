"""Seeded smooth radial test data."""

from __future__ import annotations

import numpy as np

from ..grid import FieldPair, RadialGrid


def _even_bump(r, centre, width):
    # symmetrized about the origin so the profile stays smooth at r = 0
    return np.exp(-(((r - centre) / width) ** 2)) + np.exp(-(((r + centre) / width) ** 2))


def random_profile(grid: RadialGrid, rng: np.random.Generator, n_bumps: int = 3) -> np.ndarray:
    r = grid.nodes
    f = np.zeros(grid.n_points, dtype=np.complex128)
    for _ in range(n_bumps):
        amp = rng.normal() + 1j * rng.normal()
        f += amp * _even_bump(r, rng.uniform(0.0, 3.0), rng.uniform(0.6, 2.0))
    return f


def random_radial_pair(grid: RadialGrid, rng: np.random.Generator, n_bumps: int = 3) -> FieldPair:
    """Finite mixture of Gaussian bumps with random complex amplitudes."""
    return FieldPair(random_profile(grid, rng, n_bumps), random_profile(grid, rng, n_bumps), grid)


def random_pairs(grid: RadialGrid, count: int, seed: int, n_bumps: int = 3) -> list[FieldPair]:
    rng = np.random.default_rng(seed)
    return [random_radial_pair(grid, rng, n_bumps) for _ in range(count)]
