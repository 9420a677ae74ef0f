"""Far-field phase structure: Green's function, dipole phase, modulated ansatz.

Also hosts the numerical checks of the algebraic identities behind the
Jacobian of the reduced pinning problem (constancy of ``W_par``, the diagonal
entries ``A_ll`` and ``A_00``) and the binary field format.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.integrate import quad
from scipy.special import j0
from sympy import Integer, finite_diff_weights

from .bloch import EffectiveDiffusivities
from .cutoff import CutoffFunction
from .errors import (
    ConfigError,
    IdentityViolation,
    IoFailure,
    KappaNonPositive,
    KappaOutOfTable,
    OriginEvaluation,
    SlowConvergence,
)
from .grids import TensorGrid
from .stripe_core import StripeFamily, StripeProfile, eval_cosine_series
from .weights import WeightedNorm, weighted_norm  # noqa: F401  (re-export)

__all__ = [
    "AnisotropicGreens",
    "CutoffFunction",
    "DipolePhase",
    "PhaseField",
    "build_phase",
    "build_ansatz",
    "greens_eval",
    "residual_R",
    "residual_pointwise",
    "leading_residual",
    "residual_decay",
    "asymptotic_decade",
    "w_parallel_check",
    "jacobi_diagonal",
    "a00",
    "weighted_norm",
    "write_field",
    "read_field",
]


# ---------------------------------------------------------------------------
# Green's function


@dataclass(frozen=True)
class AnisotropicGreens:
    """Fundamental solution of ``d_par d_1^2 + d_perp Delta_perp``.

    ``normalization="flux"`` gives ``Delta_eff G = delta`` (unit outward flux of
    ``(d_par G_1, d_perp grad_perp G)``).  ``"radial"`` gives the function of
    ``r = |x|_eff`` with ``dG/dr = -r^{1-n} / |S^{n-1}|``; it equals
    ``-(d_par d_perp^{n-1})^{1/2}`` times the flux-normalized one.
    """

    d_par: float
    d_perp: float
    n: int = 2
    normalization: str = "flux"

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ConfigError("n must be 2 or 3")
        if self.normalization not in ("flux", "radial"):
            raise ConfigError("normalization must be 'flux' or 'radial'")
        if self.d_par <= 0 or self.d_perp <= 0:
            raise ConfigError("diffusivities must be positive")

    @classmethod
    def from_diffusivities(cls, d: EffectiveDiffusivities, n=2, normalization="flux"):
        return cls(d.d_par, d.d_perp, n, normalization)

    @property
    def scales(self) -> np.ndarray:
        return np.sqrt(np.array([self.d_par] + [self.d_perp] * (self.n - 1)))

    @property
    def constant(self) -> float:
        """Prefactor ``c`` in ``G = c Phi(y)``, ``y_i = x_i / s_i``."""
        vol = float(np.prod(self.scales))
        base = 1 / (2 * np.pi * vol) if self.n == 2 else 1 / (4 * np.pi * vol)
        # flux: G = log|y| / (2 pi vol) (n=2), -1 / (4 pi vol |y|) (n=3)
        sign = 1.0 if self.n == 2 else -1.0
        if self.normalization == "radial":
            return -vol * sign * base
        return sign * base

    def effective_radius(self, *x) -> np.ndarray:
        return np.sqrt(sum((np.asarray(c, dtype=float) / s) ** 2 for c, s in zip(x, self.scales)))

    def __call__(self, *x):
        return self.derivative(x, (0,) * self.n)

    def derivative(self, x, alpha) -> np.ndarray:
        """``d^alpha G`` at the points ``x`` (a tuple of coordinate arrays)."""
        if len(x) != self.n or len(alpha) != self.n:
            raise ValueError("dimension mismatch")
        y = [np.asarray(c, dtype=float) / s for c, s in zip(x, self.scales)]
        if np.any(sum(c**2 for c in y) == 0):
            raise OriginEvaluation("Green's function evaluated at the origin")
        pref = self.constant * float(np.prod(self.scales ** (-np.asarray(alpha, dtype=float))))
        if self.n == 2:
            return pref * _log_derivative(y[0], y[1], alpha[0], alpha[1])
        return pref * _inverse_radius_derivative(y, alpha)

    def gradient(self, *x) -> list:
        return [self.derivative(x, tuple(int(i == j) for i in range(self.n)))
                for j in range(self.n)]

    def flux(self, n_points: int = 256) -> float:
        """Outward flux of ``(d_par G_1, d_perp G_2)`` through ``|x|_eff = 1`` (2D)."""
        if self.n != 2:
            raise ConfigError("flux quadrature implemented for n = 2")
        phi = 2 * np.pi * np.arange(n_points) / n_points
        s1, s2 = self.scales
        x1, x2 = s1 * np.cos(phi), s2 * np.sin(phi)
        g1, g2 = self.gradient(x1, x2)
        # outward normal times arclength: (dx2/dphi, -dx1/dphi) dphi
        integrand = self.d_par * g1 * s2 * np.cos(phi) + self.d_perp * g2 * s1 * np.sin(phi)
        return float(np.sum(integrand) * 2 * np.pi / n_points)


def _log_derivative(y1, y2, a, b):
    """``d_1^a d_2^b log|y|`` via ``Re(i^b (d/dz)^{a+b} log z)``."""
    m = a + b
    z = y1 + 1j * y2
    if m == 0:
        return np.log(np.abs(z))
    val = (-1) ** (m - 1) * factorial(m - 1) * z ** (-m)
    return np.real((1j) ** b * val)


def _inverse_radius_derivative(y, alpha):
    """Derivatives of ``1/|y|`` in 3D up to total order 3."""
    order = sum(alpha)
    r2 = sum(c**2 for c in y)
    r = np.sqrt(r2)
    idx = [i for i, a in enumerate(alpha) for _ in range(a)]
    if order == 0:
        return 1 / r
    if order == 1:
        return -y[idx[0]] / r**3
    if order == 2:
        i, j = idx
        return 3 * y[i] * y[j] / r**5 - (i == j) / r**3
    if order == 3:
        i, j, k = idx
        return -15 * y[i] * y[j] * y[k] / r**7 + 3 * (
            (i == j) * y[k] + (i == k) * y[j] + (j == k) * y[i]) / r**5
    raise ConfigError("3D Green's function derivatives implemented up to order 3")


def greens_eval(G: AnisotropicGreens, x, alpha=None) -> np.ndarray:
    return G.derivative(tuple(x), alpha if alpha is not None else (0,) * G.n)


# ---------------------------------------------------------------------------
# phase


@dataclass(frozen=True)
class DipolePhase:
    """``Theta(x) = (1 - chi(x)) a . grad G(x)`` as an analytic function."""

    a: tuple
    G: AnisotropicGreens
    cutoff: CutoffFunction = CutoffFunction(1.0)

    def _dipole(self, x, alpha):
        """``d^alpha (a . grad G)``."""
        out = 0.0
        for j, aj in enumerate(self.a):
            if aj:
                beta = list(alpha)
                beta[j] += 1
                out = out + aj * self.G.derivative(x, tuple(beta))
        return out

    def _safe(self, x):
        # the cutoff vanishes the dipole near the origin; avoid evaluating G there
        x = [np.asarray(c, dtype=float) for c in np.broadcast_arrays(*x)]
        r = np.sqrt(sum(c**2 for c in x))
        inner = r < self.cutoff.r
        xs = [np.where(inner, 10 * self.cutoff.r if i == 0 else 0.0, c)
              for i, c in enumerate(x)]
        return x, xs, r, inner

    def theta(self, *x):
        x, xs, r, inner = self._safe(x)
        if not any(self.a):
            return np.zeros_like(r)
        val = (1 - self.cutoff.radial_derivative(r, 0)) * self._dipole(xs, (0,) * len(x))
        return np.where(inner, 0.0, val)

    def gradient(self, *x) -> list:
        x, xs, r, inner = self._safe(x)
        n = len(x)
        if not any(self.a):
            return [np.zeros_like(r) for _ in range(n)]
        chi = self.cutoff.radial_derivative(r, 0)
        dchi = self.cutoff.radial_derivative(r, 1)
        F = self._dipole(xs, (0,) * n)
        rs = np.where(inner, 1.0, r)
        out = []
        for i in range(n):
            e = tuple(int(j == i) for j in range(n))
            val = (1 - chi) * self._dipole(xs, e) - dchi * x[i] / rs * F
            out.append(np.where(inner, 0.0, val))
        return out

    def hessian(self, *x) -> np.ndarray:
        """Second derivatives, shape ``(n, n) + x.shape``."""
        x, xs, r, inner = self._safe(x)
        n = len(x)
        H = np.zeros((n, n) + r.shape)
        if not any(self.a):
            return H
        chi = self.cutoff.radial_derivative(r, 0)
        d1 = self.cutoff.radial_derivative(r, 1)
        d2 = self.cutoff.radial_derivative(r, 2)
        rs = np.where(inner, 1.0, r)
        F = self._dipole(xs, (0,) * n)
        Fi = [self._dipole(xs, tuple(int(j == i) for j in range(n))) for i in range(n)]
        for i in range(n):
            for j in range(n):
                alpha = [0] * n
                alpha[i] += 1
                alpha[j] += 1
                ci, cj = d1 * x[i] / rs, d1 * x[j] / rs
                cij = d2 * x[i] * x[j] / rs**2 + d1 * ((i == j) / rs - x[i] * x[j] / rs**3)
                val = (1 - chi) * self._dipole(xs, tuple(alpha)) - ci * Fi[j] - cj * Fi[i] - cij * F
                H[i, j] = np.where(inner, 0.0, val)
        return H

    def psi(self, *x):
        return np.asarray(x[0], dtype=float) + self.theta(*x)

    def kappa(self, *x):
        return 1 + self.kappa_minus_one(*x)

    def kappa_minus_one(self, *x):
        """``|grad psi| - 1`` without the cancellation of subtracting 1."""
        g = self.gradient(*x)
        q = 2 * g[0] + sum(c**2 for c in g)
        return q / (np.sqrt(1 + q) + 1)


@dataclass
class PhaseField:
    a_vec: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    model: DipolePhase


def build_phase(a_vec, G: AnisotropicGreens, grid: TensorGrid,
                cutoff: CutoffFunction = CutoffFunction(1.0)) -> PhaseField:
    """Sample ``Theta``, ``psi = x_1 + Theta`` and ``kappa = |grad psi|`` on a grid."""
    a_vec = np.asarray(a_vec, dtype=float)
    if min(grid.spacing) > cutoff.r / 8:
        warnings.warn(
            f"grid spacing {min(grid.spacing):.3g} does not resolve the cutoff annulus "
            f"with 8 cells", stacklevel=2)
    model = DipolePhase(tuple(a_vec), G, cutoff)
    X = grid.mesh()
    theta = model.theta(*X)
    grad = model.gradient(*X)
    if np.min(1 + grad[0]) <= 0:
        raise KappaNonPositive("phase folds (d psi / d x_1 <= 0); dipole too large")
    kappa = np.sqrt((1 + grad[0]) ** 2 + sum(g**2 for g in grad[1:]))
    return PhaseField(a_vec, theta, X[0] + theta, kappa, model)


def build_ansatz(family: StripeFamily, phase: PhaseField | DipolePhase, points=None):
    """``u_psi = u_*(psi; kappa)``; on the phase's grid or at explicit points."""
    if isinstance(phase, PhaseField):
        psi, kappa = phase.psi, phase.kappa
    else:
        psi, kappa = phase.psi(*points), phase.kappa(*points)
    if not family.in_range(kappa):
        raise KappaOutOfTable(
            f"kappa in [{np.min(kappa):.4f}, {np.max(kappa):.4f}] outside table "
            f"{family.k_range}")
    return family.evaluate(psi, kappa)


# ---------------------------------------------------------------------------
# residual of the ansatz


def residual_R(family: StripeFamily, phase: PhaseField, grid: TensorGrid) -> np.ndarray:
    """``R = -(Delta + 1)^2 u_psi + mu u_psi - u_psi^3`` with a spectral Laplacian.

    On a periodic box the non-periodic dipole tail makes this accurate only
    away from the box edge; :func:`residual_pointwise` avoids that.
    """
    u = build_ansatz(family, phase)
    K2 = sum(np.meshgrid(*[k**2 for k in grid.wavenumbers()], indexing="ij"))
    sym = (1 - K2) ** 2
    lin = np.real(np.fft.ifftn(sym * np.fft.fftn(u)))
    return -lin + family.center.mu * u - u**3


@lru_cache(maxsize=None)
def fd_weights(order: int, half_width: int) -> np.ndarray:
    """Centered finite-difference weights on offsets ``-K..K`` (unit spacing).

    Computed in exact rational arithmetic; a floating Vandermonde solve loses
    about six digits at ``K = 10``.
    """
    offsets = [Integer(i) for i in range(-half_width, half_width + 1)]
    w = finite_diff_weights(order, offsets, 0)[order][-1]
    return np.array([float(x) for x in w])


def residual_pointwise(family: StripeFamily, phase: DipolePhase, x1, x2,
                       h1: float = 0.1, h2: float | None = None,
                       half_width: int = 6) -> np.ndarray:
    """``R(psi) = F(u_psi)`` at arbitrary points by high-order finite differences.

    The stencil is applied to ``u_psi - u_*(x_1 + Theta(x_0))`` with the phase
    frozen at the evaluation point ``x_0``.  The subtracted field is an exact
    stripe, so its contribution is known analytically and the differenced
    part is small, which keeps truncation and cancellation errors far below
    the residual itself.  Phases are reduced modulo ``2 pi`` before the
    stencil offsets are added so that large ``|x_1|`` costs no accuracy.
    """
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if family.center.k != 1.0:
        raise ConfigError("the phase psi = x_1 + Theta assumes a unit carrier wavenumber")
    h2 = h1 if h2 is None else h2
    mu = family.center.mu
    c0 = family.center.coeffs
    w2 = fd_weights(2, half_width - 1)
    w4 = fd_weights(4, half_width)
    K2, K4 = half_width - 1, half_width
    base = np.mod(x1, 2 * np.pi)
    theta0 = phase.theta(x1, x2)
    m = np.arange(c0.size, dtype=float)
    cache = {}

    def vv(i, j):
        # u_*(xi + d; kappa) - u_*(xi; k0) with xi = x_1 + Theta(x_0), d = Theta(x) - Theta(x_0),
        # assembled from small increments so it carries relative, not absolute, round-off
        if (i, j) not in cache:
            p1, p2 = x1 + i * h1, x2 + j * h2
            dkappa = phase.kappa_minus_one(p1, p2)
            kappa = 1 + dkappa
            if not family.in_range(kappa):
                raise KappaOutOfTable(
                    f"kappa in [{np.min(kappa):.4f}, {np.max(kappa):.4f}] outside table "
                    f"{family.k_range}")
            d = phase.theta(p1, p2) - theta0
            xi = np.multiply.outer(base + i * h1 + theta0, m)
            half = np.multiply.outer(d / 2, m)
            dc = family.coeffs_increment(dkappa)
            cache[(i, j)] = (np.sum(dc * np.cos(xi + 2 * half), axis=-1)
                             - 2 * np.sin(xi + half) * np.sin(half) @ c0)
        return cache[(i, j)]

    def axis(weights, K, axis_index):
        tot = 0.0
        for s, w in zip(range(-K, K + 1), weights):
            if w:
                tot = tot + w * (vv(s, 0) if axis_index == 1 else vv(0, s))
        return tot

    d11 = axis(w2, K2, 1) / h1**2
    d22 = axis(w2, K2, 2) / h2**2
    d1111 = axis(w4, K4, 1) / h1**4
    d2222 = axis(w4, K4, 2) / h2**4
    d1122 = 0.0
    for i, wi in zip(range(-K2, K2 + 1), w2):
        for j, wj in zip(range(-K2, K2 + 1), w2):
            if wi and wj:
                d1122 = d1122 + wi * wj * vv(i, j)
    d1122 = d1122 / (h1**2 * h2**2)
    v0 = vv(0, 0)
    lap_sq_v = d1111 + 2 * d1122 + d2222 + 2 * (d11 + d22) + v0
    w0 = eval_cosine_series(c0, 0, base + theta0)
    u0 = v0 + w0
    # (Delta+1)^2 w = mu w - w^3 for the exact stripe w
    return -lap_sq_v + mu * v0 - v0 * (u0**2 + u0 * w0 + w0**2)


def leading_residual(profile: StripeProfile, phase: DipolePhase, x1, x2) -> np.ndarray:
    """``D_par psi_11 + D_perp psi_22`` with the stripe coefficients at ``xi = psi``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    psi = phase.psi(x1, x2)
    H = phase.hessian(x1, x2)
    c, ck = profile.coeffs, profile.coeffs_k
    d_par = (-4 * eval_cosine_series(ck, 3, psi) - 6 * eval_cosine_series(c, 3, psi)
             - 4 * eval_cosine_series(ck, 1, psi) - 2 * eval_cosine_series(c, 1, psi))
    d_perp = -2 * eval_cosine_series(c, 3, psi) - 2 * eval_cosine_series(c, 1, psi)
    return d_par * H[0, 0] + d_perp * H[1, 1]


def asymptotic_decade(diff: EffectiveDiffusivities, start: float = 100.0, n: int = 8) -> np.ndarray:
    """Radii spanning one decade from ``start * sqrt(d_par / d_perp)``.

    Corrections carrying two extra transverse derivatives are smaller than the
    leading terms by ``(sqrt(d_par / d_perp) / r)^2``; ``start = 100`` puts
    them at 1e-4 at the inner radius.
    """
    r0 = start * np.sqrt(diff.d_par / diff.d_perp)
    return np.geomspace(r0, 10 * r0, n)


@dataclass
class DecayFit:
    radii: np.ndarray
    norms: np.ndarray
    norms_subtracted: np.ndarray
    slope: float
    slope_subtracted: float
    stderr: float
    stderr_subtracted: float

    def rows(self):
        return zip(self.radii, self.norms, self.norms_subtracted)


def _fit(r, y):
    A = np.column_stack([np.ones_like(r), np.log(r)])
    coef, res, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    dof = max(len(r) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * (resid @ resid) / dof
    return float(coef[1]), float(np.sqrt(cov[1, 1]))


def residual_decay(family: StripeFamily, phase: DipolePhase, radii, n_angles: int = 48,
                   n_radial: int = 8, h1: float = 0.2, transverse_step: float = 0.05,
                   half_width: int = 10) -> DecayFit:
    """Envelope of ``|R|`` and ``|R - leading term|`` along ``|x|`` and their decay rates.

    At each radius the envelope is the maximum over one stripe period in the
    radial direction and over angles spaced uniformly in the effective angle
    (so the narrow anisotropic wedge of the dipole field is resolved).
    """
    G = phase.G
    s1, s2 = G.scales[0], G.scales[1]
    radii = np.asarray(radii, dtype=float)
    phi = np.pi * (np.arange(n_angles) + 0.5) / n_angles - np.pi / 2
    th = np.arctan2(s2 * np.sin(phi), s1 * np.cos(phi))
    norms, subs = [], []
    for r0 in radii:
        rr = r0 + 2 * np.pi * np.arange(n_radial) / n_radial
        R_, T_ = np.meshgrid(rr, th, indexing="ij")
        x1, x2 = R_ * np.cos(T_), R_ * np.sin(T_)
        # the stencil spans a fixed fraction of the wedge width r s2 / s1; larger
        # steps keep the 1/h^4 round-off amplification small
        R = residual_pointwise(family, phase, x1, x2, h1=h1,
                               h2=transverse_step * r0 * s2 / s1, half_width=half_width)
        L = leading_residual(family.center, phase, x1.ravel(), x2.ravel())
        norms.append(np.max(np.abs(R)))
        subs.append(np.max(np.abs(R - L)))
    norms, subs = np.array(norms), np.array(subs)
    s, se = _fit(radii, norms)
    ss, sse = _fit(radii, subs)
    return DecayFit(radii, norms, subs, s, ss, se, sse)


# ---------------------------------------------------------------------------
# identities


@dataclass
class WCheck:
    w_par_mean: float
    w_par_max_dev: float
    w_par_expected: float
    w_perp_mean: float
    w_perp_expected: float

    @property
    def w_par_relative_variation(self) -> float:
        return abs(self.w_par_max_dev / self.w_par_mean)

    @property
    def w_par_mean_error(self) -> float:
        return abs(self.w_par_mean / self.w_par_expected - 1)

    @property
    def w_perp_mean_error(self) -> float:
        return abs(self.w_perp_mean / self.w_perp_expected - 1)


def w_parallel_profile(profile: StripeProfile, xi) -> np.ndarray:
    """Pointwise ``W_par``; constant when ``u_{*,k}`` solves its defining equation."""
    c, ck = profile.coeffs, profile.coeffs_k
    u = [eval_cosine_series(c, m, xi) for m in range(5)]
    w = [eval_cosine_series(ck, m, xi) for m in range(5)]
    out = 4 * u[1] * u[3] - 2 * u[2] ** 2 + 2 * u[1] ** 2
    out -= sum((-1) ** m * u[m] * w[4 - m] for m in range(1, 5))
    out -= 2 * sum((-1) ** t * u[t] * w[2 - t] for t in range(1, 3))
    return out


def w_perp_profile(profile: StripeProfile, xi) -> np.ndarray:
    c = profile.coeffs
    u1, u3 = eval_cosine_series(c, 1, xi), eval_cosine_series(c, 3, xi)
    return 2 * (u1 * u3 + u1**2)


def w_parallel_check(profile: StripeProfile, diff: EffectiveDiffusivities,
                     n_points: int = 256, rtol_const: float = 1e-8,
                     rtol_mean: float = 1e-6, raise_on_fail: bool = True) -> WCheck:
    if profile.k != 1.0:
        raise ConfigError("the identities are stated at k = 1")
    xi = 2 * np.pi * np.arange(n_points) / n_points
    W = w_parallel_profile(profile, xi)
    Wp = w_perp_profile(profile, xi)
    b = -np.arange(profile.n_modes) * profile.coeffs
    norm2 = np.pi * np.sum(b**2)
    chk = WCheck(
        w_par_mean=float(W.mean()),
        w_par_max_dev=float(np.max(np.abs(W - W.mean()))),
        w_par_expected=float(-norm2 * diff.d_par / (2 * np.pi)),
        w_perp_mean=float(Wp.mean()),
        w_perp_expected=float(-norm2 * diff.d_perp / (2 * np.pi)),
    )
    if raise_on_fail:
        if chk.w_par_relative_variation > rtol_const:
            raise IdentityViolation(f"W_par varies by {chk.w_par_relative_variation:.2e}")
        if chk.w_par_mean_error > rtol_mean or chk.w_perp_mean_error > rtol_mean:
            raise IdentityViolation(
                f"W means off by {chk.w_par_mean_error:.2e} / {chk.w_perp_mean_error:.2e}")
    return chk


def a00(profile: StripeProfile, R: float, cutoff_recipe: str = "quintic") -> float:
    """``int chi_R(x) u_*'(x_1)^2 dx`` over the plane (2D), via Bessel averages.

    The angular average of ``cos(m x_1)`` on the circle of radius ``r`` is
    ``J_0(m r)``, which reduces the integral to one radial quadrature.
    """
    chi = CutoffFunction(R, cutoff_recipe)
    # cosine coefficients of u'^2 from a dense sample
    n = 8 * profile.n_modes
    xi = 2 * np.pi * np.arange(n) / n
    sq = eval_cosine_series(profile.coeffs, 1, xi) ** 2
    F = np.fft.rfft(sq) / n
    cm = 2 * F.real
    cm[0] /= 2
    keep = np.nonzero(np.abs(cm) > 1e-18 * np.abs(cm).max())[0]

    def radial(r):
        return chi.profile(r / R) * r * np.sum(cm[keep] * j0(keep * r))

    breaks = list(np.arange(0, 2 * R, np.pi / 2)) + [R, 2 * R]
    breaks = sorted(set(b for b in breaks if b <= 2 * R))
    total = sum(quad(radial, a, b, epsabs=1e-14, epsrel=1e-12)[0]
                for a, b in zip(breaks[:-1], breaks[1:]))
    return 2 * np.pi * total


# --- A_ll via boundary terms ------------------------------------------------


def _stripe_derivs(coeffs, x1, max_order):
    return [eval_cosine_series(coeffs, m, x1) for m in range(max_order + 1)]


class _JacobiFields:
    """Derivatives of ``f_l = H_{1,l}`` and ``g_j = u' psi_j + u_k (psi_j)_1``.

    ``psi_j = d_j G`` (the cutoff is identically zero on the box boundary).
    """

    def __init__(self, profile: StripeProfile, G: AnisotropicGreens):
        self.p = profile
        self.G = G

    def f(self, l, x1, x2, a, b, U, Uk):
        """``d_1^a d_2^b H_{1,l}``; ``U[m] = u^{(m)}(x1)``, ``Uk[m] = u_k^{(m)}(x1)``."""
        if l == 1:
            if b:
                return np.zeros_like(x1 * x2)
            return x1 * U[a + 1] + a * U[a] + Uk[a] + 0 * x2
        if b == 0:
            return x2 * U[a + 1]
        if b == 1:
            return U[a + 1] + 0 * x2
        return np.zeros_like(x1 * x2)

    def g(self, j, x1, x2, a, b, U, Uk):
        total = 0.0
        for i in range(a + 1):
            c = comb(a, i)
            total = total + c * (
                U[1 + i] * self._psi(j, x1, x2, a - i, b)
                + Uk[i] * self._psi(j, x1, x2, a - i + 1, b)
            )
        return total

    def _psi(self, j, x1, x2, a, b):
        alpha = [a, b]
        alpha[j - 1] += 1
        return self.G.derivative((x1, x2), tuple(alpha))


def _bilinear_flux(F, Gf, normal):
    """Outward-normal boundary density of ``int (f L g - g L f)`` for
    ``L = -(Delta + 1)^2 + V``.

    ``F`` and ``Gf`` map ``(a, b)`` to derivative samples.
    """
    def dn(D, a, b):
        return D(a + 1, b) if normal == 1 else D(a, b + 1)

    def lap(D):
        return D(2, 0) + D(0, 2)

    def dn_lap(D):
        return dn(D, 2, 0) + dn(D, 0, 2)

    f, g = F(0, 0), Gf(0, 0)
    bih = f * dn_lap(Gf) - lap(Gf) * dn(F, 0, 0) + lap(F) * dn(Gf, 0, 0) - g * dn_lap(F)
    har = f * dn(Gf, 0, 0) - g * dn(F, 0, 0)
    return -(bih + 2 * har)


def _gauss_panels(edges, n=24):
    xg, wg = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def box_boundary_integral(profile: StripeProfile, G: AnisotropicGreens, l: int, j: int,
                          R: float) -> float:
    """``int_{[-R,R]^2} f_l L g_j`` via boundary terms (``L f_l = 0`` exactly)."""
    fields = _JacobiFields(profile, G)
    c, ck = profile.coeffs, profile.coeffs_k
    w = R * G.scales[1] / G.scales[0]  # transverse width of the dipole wedge at x1 = R
    # vertical sides x1 = +-R: geometric panels around x2 = 0
    grade = [0.0]
    h = min(w / 8, R)
    while grade[-1] + h < R:
        grade.append(grade[-1] + h)
        h *= 1.5
    grade.append(R)
    grade = np.array(grade)
    edges_v = np.concatenate([-grade[::-1], grade[1:]])
    yv, wv = _gauss_panels(edges_v)
    # horizontal sides x2 = +-R: panels of a quarter period
    n_pan = max(4, int(np.ceil(2 * R / (np.pi / 2))))
    xh, wh = _gauss_panels(np.linspace(-R, R, n_pan + 1), 16)
    total = 0.0
    for side, sgn in ((1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)):
        if side == 1:
            x1 = np.full_like(yv, sgn * R)
            x2 = yv
            wts = wv
        else:
            x1 = xh
            x2 = np.full_like(xh, sgn * R)
            wts = wh
        U = _stripe_derivs(c, x1, 6)
        Uk = _stripe_derivs(ck, x1, 5)
        F = lambda a, b: fields.f(l, x1, x2, a, b, U, Uk)  # noqa: E731
        Gf = lambda a, b: fields.g(j, x1, x2, a, b, U, Uk)  # noqa: E731
        # outward normal is -e_side on the negative sides: every term flips sign
        total += sgn * np.sum(_bilinear_flux(F, Gf, side) * wts)
    return float(total)


@dataclass
class JacobiEntries:
    radii: np.ndarray
    raw: dict
    extrapolated: dict
    closed_form: float
    fit_residual: dict
    a00: float | None = None

    def relative_error(self, l: int) -> float:
        return abs(self.extrapolated[(l, l)] / self.closed_form - 1)


def jacobi_closed_form(profile: StripeProfile, diff: EffectiveDiffusivities, n: int = 2) -> float:
    b = -np.arange(profile.n_modes) * profile.coeffs
    norm2 = np.pi * np.sum(b**2)
    return float(norm2 * np.sqrt(diff.d_par * diff.d_perp ** (n - 1)) / (2 * np.pi))


def jacobi_diagonal(
    profile: StripeProfile,
    diff: EffectiveDiffusivities,
    radii,
    G: AnisotropicGreens | None = None,
    cap_radius: float | None = None,
    extrapolation_order: int = 2,
    rtol: float = 1e-3,
    raise_on_slow: bool = False,
) -> JacobiEntries:
    """Box integrals ``A_lj(R)`` for ``l, j in {1, 2}`` with Richardson extrapolation.

    ``G`` defaults to the radial normalization, for which the diagonal limit
    has the closed form of :func:`jacobi_closed_form`.
    """
    if profile.k != 1.0:
        raise ConfigError("the identities are stated at k = 1")
    if G is None:
        G = AnisotropicGreens(diff.d_par, diff.d_perp, 2, "radial")
    radii = np.asarray(radii, dtype=float)
    raw, ext, res = {}, {}, {}
    for l in (1, 2):
        for j in (1, 2):
            vals = np.array([box_boundary_integral(profile, G, l, j, R) for R in radii])
            raw[(l, j)] = vals
            V = np.vander(1 / radii, extrapolation_order + 1, increasing=True)
            coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
            ext[(l, j)] = float(coef[0])
            res[(l, j)] = float(np.max(np.abs(V @ coef - vals)))
    closed = jacobi_closed_form(profile, diff)
    if G.normalization == "flux":
        closed = closed / (-np.prod(G.scales))
    out = JacobiEntries(radii, raw, ext, closed, res,
                        a00(profile, cap_radius) if cap_radius else None)
    if raise_on_slow and any(out.relative_error(l) > rtol for l in (1, 2)):
        raise SlowConvergence("box extrapolation does not reach the closed form")
    return out


# ---------------------------------------------------------------------------
# binary fields

MAGIC = b"SPIN"
VERSION = 1
_HEADER = struct.Struct("<4sIIII4d12x")  # magic, version, n, Nx, Ny, dx, dy, x0, y0


def write_field(path, field, grid: TensorGrid, provenance: dict | None = None) -> None:
    """64-byte header, then row-major little-endian doubles; JSON sidecar at ``path.json``."""
    field = np.ascontiguousarray(field, dtype="<f8")
    if grid.dim != 2 or field.shape != grid.shape:
        raise ConfigError("field must be 2D and match the grid")
    hdr = _HEADER.pack(MAGIC, VERSION, 2, grid.shape[0], grid.shape[1],
                       grid.spacing[0], grid.spacing[1], -grid.lengths[0] / 2,
                       -grid.lengths[1] / 2)
    try:
        with open(path, "wb") as fh:
            fh.write(hdr)
            fh.write(field.tobytes(order="C"))
        with open(str(path) + ".json", "w") as fh:
            json.dump(provenance or {}, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_field(path):
    """Return ``(field, grid, provenance)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            with open(str(path) + ".json") as fh:
                prov = json.load(fh)
        except FileNotFoundError:
            prov = {}
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    magic, ver, n, Nx, Ny, dx, dy, ox, oy = _HEADER.unpack(raw[:64])
    if magic != MAGIC or ver != VERSION or n != 2:
        raise IoFailure(f"{path} is not a version-{VERSION} 2D field file")
    field = np.frombuffer(raw[64:], dtype="<f8").reshape(Nx, Ny).copy()
    return field, TensorGrid((Nx, Ny), (Nx * dx, Ny * dy)), prov
