"""Smooth radial cutoffs equal to 1 inside radius ``r`` and 0 beyond ``2 r``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _quintic(t):
    # C^2 smoothstep, descending from 1 at t=0 to 0 at t=1
    return 1 - t**3 * (10 - 15 * t + 6 * t**2)


def _quintic_d(t, order):
    if order == 1:
        return -30 * t**2 * (1 - t) ** 2
    if order == 2:
        return -60 * t * (1 - t) * (1 - 2 * t)
    if order == 3:
        return -60 * (1 - 6 * t + 6 * t**2)
    raise ValueError("quintic cutoff derivatives available up to order 3")


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1 / t[pos])
    return out


def _exp_bump(t):
    a, b = _psi(1 - t), _psi(t)
    return a / (a + b)


def _exp_bump_d(t, order):
    """Derivatives of ``_exp_bump`` on the open interval ``0 < t < 1``."""
    a, b = np.exp(-1 / (1 - t)), np.exp(-1 / t)
    q = a * b / (a + b) ** 2
    w = 1 / (1 - t) ** 2 + 1 / t**2
    if order == 1:
        return -q * w
    dq = q * (-1 / (1 - t) ** 2 + 1 / t**2 - 2 * (-a / (1 - t) ** 2 + b / t**2) / (a + b))
    dw = 2 / (1 - t) ** 3 - 2 / t**3
    return -(dq * w + q * dw)


@dataclass(frozen=True)
class CutoffFunction:
    r: float = 1.0
    recipe: str = "quintic"

    def __post_init__(self):
        if self.recipe not in ("quintic", "exp"):
            raise ValueError("recipe must be 'quintic' or 'exp'")
        if self.r <= 0:
            raise ValueError("r must be positive")

    def profile(self, s, order: int = 0):
        """Radial profile ``chi(s)`` in units of ``r`` (and its ``s``-derivatives)."""
        s = np.asarray(s, dtype=float)
        t = np.clip(s - 1.0, 0.0, 1.0)
        inside = (s > 1) & (s < 2)
        if order == 0:
            f = _quintic(t) if self.recipe == "quintic" else _exp_bump(t)
            return np.where(s <= 1, 1.0, np.where(s >= 2, 0.0, f))
        if self.recipe == "quintic":
            return np.where(inside, _quintic_d(t, order), 0.0)
        if order > 2:
            raise ValueError("exp cutoff derivatives available up to order 2")
        d = np.zeros_like(t)
        d[inside] = _exp_bump_d(t[inside], order)
        return np.where(inside, d, 0.0)

    def __call__(self, *coords):
        rad = np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in coords))
        return self.profile(rad / self.r)

    def radial_derivative(self, rad, order: int = 1):
        """``d^order/d|x|^order chi(|x| / r)``."""
        return self.profile(np.asarray(rad) / self.r, order) / self.r**order
