"""Algebraically weighted norms on truncated boxes."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .grids import TensorGrid


@dataclass(frozen=True)
class WeightedNorm:
    value: float
    tail_fraction: float
    """Share of the squared norm coming from ``|x| > R_tail`` (a quarter of the box)."""
    tail_radius: float

    def converged(self, tol: float = 1e-6) -> bool:
        return self.tail_fraction < tol


def japanese_bracket(grid: TensorGrid) -> np.ndarray:
    return np.sqrt(1 + grid.radius() ** 2)


def spectral_derivative(field, grid: TensorGrid, alpha) -> np.ndarray:
    F = np.fft.fftn(field)
    for axis, (a, kk) in enumerate(zip(alpha, grid.wavenumbers())):
        if a:
            shape = [1] * grid.dim
            shape[axis] = -1
            F = F * ((1j * kk) ** a).reshape(shape)
    out = np.fft.ifftn(F)
    return out.real if np.isrealobj(field) else out


def weighted_norm(field, grid: TensorGrid, gamma: float, kind: str = "L2_gamma",
                  order: int = 0) -> WeightedNorm:
    """``L^2_gamma`` norm, or the Kondratiev norm with derivatives up to ``order``.

    The Kondratiev norm sums ``||<x>^{|alpha| + gamma} D^alpha f||^2`` over
    ``|alpha| <= order``; derivatives are spectral, so the field should be
    smooth and periodic (or negligible) at the box edge.
    """
    if kind not in ("L2_gamma", "kondratiev"):
        raise ValueError("kind must be 'L2_gamma' or 'kondratiev'")
    field = np.asarray(field)
    br = japanese_bracket(grid)
    r = grid.radius()
    R_tail = min(grid.lengths) / 4
    alphas = [(0,) * grid.dim]
    if kind == "kondratiev":
        alphas = [a for a in product(range(order + 1), repeat=grid.dim) if sum(a) <= order]
    dens = np.zeros(grid.shape)
    for a in alphas:
        f = field if not any(a) else spectral_derivative(field, grid, a)
        dens += np.abs(f) ** 2 * br ** (2 * (sum(a) + gamma))
    total = grid.integrate(dens)
    tail = grid.integrate(np.where(r > R_tail, dens, 0.0))
    frac = tail / total if total > 0 else 0.0
    return WeightedNorm(float(np.sqrt(total)), float(frac), float(R_tail))
