"""Periodic stripe solutions of the 1D Swift-Hohenberg boundary-value problem.

The stripe ``u(xi; k)`` solves

    -(k^2 d^2/dxi^2 + 1)^2 u + mu u - u^3 = 0,   u(xi) = u(xi + 2 pi),

and is represented by a truncated cosine series, which fixes the translation
gauge (``u`` even in ``xi``).  Everything downstream (Bloch operators, pinning
integrals, identity checks) consumes :class:`StripeProfile` objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    LengthMismatch,
    NonConvergence,
    OutsideExistence,
    SingularSystem,
    TrivialSolution,
)

DEFAULT_TOL = 1e-12
MAX_HALVINGS = 10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StripeProfile:
    """Converged stripe ``u_*(xi; k)`` and its wavenumber derivative.

    ``coeffs[m]`` multiplies ``cos(m xi)``; ``coeffs_k`` are the cosine
    coefficients of ``d u_*/dk`` at fixed ``xi``.
    """

    mu: float
    k: float
    coeffs: np.ndarray
    coeffs_k: np.ndarray
    residual_norm: float
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))
        object.__setattr__(self, "coeffs_k", _frozen(self.coeffs_k))

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    @property
    def amplitude(self) -> float:
        """Leading (``cos xi``) coefficient."""
        return float(self.coeffs[1])

    def bandwidth(self, rel: float = 1e-17) -> int:
        """Highest cosine mode whose coefficient exceeds ``rel * max|c|``."""
        big = np.nonzero(np.abs(self.coeffs) > rel * np.abs(self.coeffs).max())[0]
        return int(big.max()) if big.size else 0

    def __call__(self, xi, derivative_order: int = 0):
        return eval_profile(self, derivative_order, xi)

    def uk(self, xi, derivative_order: int = 0):
        """``d^m/dxi^m`` of ``u_{*,k}`` at ``xi``."""
        return eval_cosine_series(self.coeffs_k, derivative_order, xi)

    def complex_coefficients(self, M: int, which: str = "u") -> np.ndarray:
        """Exponential Fourier coefficients ``f_m``, ``m = -M..M``."""
        c = self.coeffs if which == "u" else self.coeffs_k
        return cosine_to_exponential(c, M)

    def to_dict(self) -> dict:
        return {
            "mu": float(self.mu),
            "k": float(self.k),
            "n_modes": int(self.n_modes),
            "coeffs": [float(v) for v in self.coeffs],
            "coeffs_k": [float(v) for v in self.coeffs_k],
            "residual_norm": float(self.residual_norm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StripeProfile":
        return cls(
            mu=float(d["mu"]),
            k=float(d["k"]),
            coeffs=np.asarray(d["coeffs"], dtype=float),
            coeffs_k=np.asarray(d["coeffs_k"], dtype=float),
            residual_norm=float(d["residual_norm"]),
        )


@dataclass(frozen=True)
class PeriodCellQuadrature:
    """Equispaced trapezoid rule on ``[0, 2 pi)``; exact for trig degree < n/2."""

    n_points: int
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        object.__setattr__(
            self, "weights", _frozen(np.full(self.n_points, 2 * np.pi / self.n_points))
        )

    @property
    def nodes(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_points) / self.n_points


class CellIntegral(NamedTuple):
    integral: float
    average: float


def cell_inner(f_samples, g_samples, quad: PeriodCellQuadrature) -> CellIntegral:
    """Integral and average of ``f * g`` over one period.

    Complex samples are allowed; the second argument is conjugated.
    """
    f = np.asarray(f_samples)
    g = np.asarray(g_samples)
    if f.shape[-1] != quad.n_points or g.shape[-1] != quad.n_points:
        raise LengthMismatch(
            f"samples have {f.shape[-1]}/{g.shape[-1]} points, quadrature has {quad.n_points}"
        )
    val = np.sum(f * np.conj(g) * quad.weights, axis=-1)
    if np.isrealobj(val) or np.all(np.imag(val) == 0):
        val = np.real(val)
    return CellIntegral(val, val / (2 * np.pi))


# ---------------------------------------------------------------------------
# series helpers


def eval_cosine_series(coeffs, derivative_order: int, xi):
    """Evaluate the ``p``-th derivative of ``sum_m c_m cos(m xi)``."""
    c = np.asarray(coeffs, dtype=float)
    xi = np.asarray(xi, dtype=float)
    p = int(derivative_order)
    if p < 0:
        raise ValueError("derivative_order must be >= 0")
    m = np.arange(c.size).astype(float)
    scale = c * m**p if p else c
    arg = np.multiply.outer(xi, m)
    # d^p cos(m x) = m^p cos(m x + p pi/2)
    r = p % 4
    if r == 0:
        return np.cos(arg) @ scale
    if r == 1:
        return -np.sin(arg) @ scale
    if r == 2:
        return -np.cos(arg) @ scale
    return np.sin(arg) @ scale


def eval_profile(profile: StripeProfile, derivative_order: int, xi):
    """Pointwise values of ``d^p u_* / dxi^p`` (2 pi-periodic)."""
    return eval_cosine_series(profile.coeffs, derivative_order, xi)


def cosine_to_exponential(c, M: int) -> np.ndarray:
    """Map cosine coefficients to exponential ones indexed ``-M..M``."""
    c = np.asarray(c, dtype=float)
    out = np.zeros(2 * M + 1, dtype=complex)
    n = min(c.size, M + 1)
    out[M] = c[0]
    out[M + 1 : M + n] = c[1:n] / 2
    out[M - n + 1 : M][::-1] = c[1:n] / 2
    return out


def derivative_series(coeffs, parity: str, order: int = 1, k: float = 1.0):
    """Coefficients and parity of ``(k d/dxi)^order`` applied to a real series.

    ``parity`` is ``"even"`` (cosine series) or ``"odd"`` (sine series).
    """
    c = np.asarray(coeffs, dtype=float)
    m = np.arange(c.size, dtype=float)
    for _ in range(order):
        if parity == "even":
            c, parity = -m * c * k, "odd"
        else:
            c, parity = m * c * k, "even"
    return c, parity


def series_inner(a, parity_a: str, b, parity_b: str) -> float:
    """``int_0^{2 pi} f g dxi`` for two real cosine/sine series."""
    if parity_a != parity_b:
        return 0.0
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = min(a.size, b.size)
    prod = np.pi * a[:n] * b[:n]
    if parity_a == "even":
        prod[0] *= 2
    else:
        prod[0] = 0.0
    return float(np.sum(prod))


def series_to_exponential(coeffs, parity: str, M: int) -> np.ndarray:
    """Exponential coefficients (``m = -M..M``) of a cosine or sine series."""
    if parity == "even":
        return cosine_to_exponential(coeffs, M)
    s = np.asarray(coeffs, dtype=float)
    out = np.zeros(2 * M + 1, dtype=complex)
    n = min(s.size, M + 1)
    # s sin(m xi) = (-i s / 2) e^{i m xi} + (i s / 2) e^{-i m xi}
    out[M + 1 : M + n] = -0.5j * s[1:n]
    out[M - n + 1 : M][::-1] = 0.5j * s[1:n]
    return out


def _grid(n_modes: int) -> np.ndarray:
    n = 4 * n_modes
    return 2 * np.pi * np.arange(n) / n


def _to_grid(c: np.ndarray, n_grid: int) -> np.ndarray:
    F = np.zeros(n_grid // 2 + 1, dtype=complex)
    F[0] = c[0] * n_grid
    F[1 : c.size] = c[1:] * n_grid / 2
    return np.fft.irfft(F, n=n_grid)


def _to_cos(u: np.ndarray, n_modes: int) -> np.ndarray:
    """Cosine projection; sine content is dropped, which enforces the gauge."""
    n_grid = u.shape[0]
    F = np.fft.rfft(u, axis=0)
    c = 2 * F[:n_modes].real / n_grid
    c[0] /= 2
    return c


def linear_symbol(mu: float, k: float, n_modes: int) -> np.ndarray:
    m = np.arange(n_modes)
    return -((1 - (k * m) ** 2) ** 2) + mu


def _residual(c, mu, k):
    n = c.size
    u = _to_grid(c, 4 * n)
    return linear_symbol(mu, k, n) * c - _to_cos(u**3, n)


def _jacobian(c, mu, k):
    """Even-subspace Jacobian in cosine-coefficient space."""
    n = c.size
    xi = _grid(n)
    u = _to_grid(c, xi.size)
    basis = np.cos(np.outer(xi, np.arange(n)))
    T = _to_cos((u**2)[:, None] * basis, n)
    return np.diag(linear_symbol(mu, k, n)) - 3 * T


def _to_sin(u: np.ndarray, n_modes: int) -> np.ndarray:
    n_grid = u.shape[0]
    F = np.fft.rfft(u, axis=0)
    s = -2 * F[:n_modes].imag / n_grid
    s[0] = 0.0
    return s


def _jacobian_odd(c, mu, k):
    """Odd-subspace Jacobian in sine-coefficient space (row/column 0 unused)."""
    n = c.size
    xi = _grid(n)
    u = _to_grid(c, xi.size)
    basis = np.sin(np.outer(xi, np.arange(n)))
    T = _to_sin((u**2)[:, None] * basis, n)
    return np.diag(linear_symbol(mu, k, n)) - 3 * T


def grid_residual(profile: StripeProfile, refine: int = 1) -> float:
    """Max-norm of the stripe equation evaluated pointwise on a grid.

    ``refine`` multiplies the default collocation grid size; derivatives are
    exact (spectral), the cubic is evaluated pointwise.
    """
    c = profile.coeffs
    n_grid = 4 * c.size * refine
    k = profile.k
    u = _to_grid(c, n_grid)
    m = np.arange(c.size)
    lin = _to_grid(-((1 - (k * m) ** 2) ** 2) * c, n_grid)
    return float(np.max(np.abs(lin + profile.mu * u - u**3)))


def solve_stripe(
    mu: float,
    k: float = 1.0,
    n_modes: int = 64,
    init=None,
    tol: float = DEFAULT_TOL,
    step_tol: float = DEFAULT_TOL,
    max_iter: int = 50,
) -> StripeProfile:
    """Newton solve of the periodic stripe problem in the even subspace.

    Without ``init`` the iteration starts from the one-mode amplitude
    ``sqrt(4 (mu - (1 - k^2)^2) / 3) cos xi`` (``sqrt(4 mu / 3)`` at ``k = 1``).
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if n_modes < 16:
        raise ValueError("n_modes must be >= 16")
    c = np.zeros(n_modes)
    if init is None:
        amp2 = 4 * (mu - (1 - k**2) ** 2) / 3
        c[1] = np.sqrt(amp2 if amp2 > 0 else 4 * mu / 3)
    else:
        init = np.asarray(init, dtype=float)
        c[: min(n_modes, init.size)] = init[:n_modes]

    history = []
    F = _residual(c, mu, k)
    res = np.max(np.abs(F))
    history.append(res)
    it = 0
    while it < max_iter:
        J = _jacobian(c, mu, k)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e14:
            raise OutsideExistence(
                f"even-subspace Jacobian singular (cond={cond:.3e}) at mu={mu}, k={k}"
            )
        dc = np.linalg.solve(J, -F)
        # converged: residual small and the Newton correction at round-off level
        if res <= tol and np.max(np.abs(dc)) <= step_tol * np.max(np.abs(c)):
            break
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            c_try = c + t * dc
            F_try = _residual(c_try, mu, k)
            r_try = np.max(np.abs(F_try))
            if r_try < res or r_try <= tol:
                break
            t /= 2
        else:
            if res <= tol:
                break
            raise NonConvergence(
                f"Newton stalled at residual {res:.3e}", residual=res, history=history
            )
        c, F, res = c_try, F_try, r_try
        history.append(res)
        it += 1
        if np.max(np.abs(c)) < 1e-8:
            raise TrivialSolution(
                f"iterate collapsed to zero (mu={mu}, k={k}); mu too small or bad seed"
            )
    if res > tol:
        raise NonConvergence(
            f"no convergence after {it} iterations, residual {res:.3e}",
            residual=res,
            history=history,
        )
    if np.max(np.abs(c)) < 1e-8:
        raise TrivialSolution("converged to the trivial state")

    ck = _solve_k_derivative(c, mu, k)
    profile = StripeProfile(mu=mu, k=k, coeffs=c, coeffs_k=ck, residual_norm=0.0,
                            iterations=it)
    return StripeProfile(
        mu=mu, k=k, coeffs=c, coeffs_k=ck, residual_norm=grid_residual(profile),
        iterations=it,
    )


def k_derivative_rhs(coeffs, k: float) -> np.ndarray:
    """Cosine coefficients of ``4 k d^2/dxi^2 (k^2 d^2/dxi^2 + 1) u``."""
    m = np.arange(len(coeffs))
    return 4 * k * (-(m**2)) * (1 - (k * m) ** 2) * np.asarray(coeffs)


def _solve_k_derivative(c, mu, k):
    J = _jacobian(c, mu, k)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystem(f"even-subspace linearization singular (cond={cond:.3e})")
    return np.linalg.solve(J, k_derivative_rhs(c, k))


def stripe_k_derivative(profile: StripeProfile) -> np.ndarray:
    """Cosine coefficients of ``u_{*,k}`` from the differentiated stripe equation."""
    return _solve_k_derivative(profile.coeffs, profile.mu, profile.k)


def linearization_even(profile: StripeProfile) -> np.ndarray:
    """Matrix of the zero-Bloch-wavenumber linearization on cosine modes."""
    return _jacobian(profile.coeffs, profile.mu, profile.k)


def linearization_odd(profile: StripeProfile) -> np.ndarray:
    """Matrix of the zero-Bloch-wavenumber linearization on sine modes ``1..n-1``."""
    return _jacobian_odd(profile.coeffs, profile.mu, profile.k)[1:, 1:]


def apply_linearization(profile: StripeProfile, f, parity: str = "even"):
    """Apply ``-(k^2 d^2 + 1)^2 + mu - 3 u_*^2`` to a cosine or sine series."""
    f = np.asarray(f, dtype=float)
    n = f.size
    m = np.arange(n)
    n_grid = 4 * max(n, profile.n_modes)
    u = _to_grid(profile.coeffs, n_grid)
    xi = 2 * np.pi * np.arange(n_grid) / n_grid
    if parity == "even":
        fg = np.cos(np.outer(xi, m)) @ f
        proj = _to_cos((u**2) * fg, n)
    else:
        fg = np.sin(np.outer(xi, m)) @ f
        F = np.fft.rfft(u**2 * fg)
        proj = -2 * F[:n].imag / n_grid
    return linear_symbol(profile.mu, profile.k, n) * f - 3 * proj


def continue_in_k(profile: StripeProfile, ks: Sequence[float], **kw) -> list:
    """Natural-parameter continuation in ``k`` seeded by the nearest solution."""
    ks = np.asarray(ks, dtype=float)
    order = np.argsort(np.abs(ks - profile.k))
    out = [None] * ks.size
    solved = [(profile.k, profile)]
    for i in order:
        seed = min(solved, key=lambda s: abs(s[0] - ks[i]))[1]
        p = solve_stripe(profile.mu, ks[i], profile.n_modes, init=seed.coeffs, **kw)
        out[i] = p
        solved.append((ks[i], p))
    return out


def fd_k_derivative(profile: StripeProfile, h: float = 1e-4, order: int = 2) -> np.ndarray:
    """Centered difference in ``k`` of the cosine coefficients.

    ``order=2`` is ``(u(k+h) - u(k-h)) / 2h``; ``order=4`` adds the ``2h``
    stencil and Richardson-extrapolates the truncation term away.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    k = profile.k
    if order == 2:
        up, um = continue_in_k(profile, [k + h, k - h])
        return (up.coeffs - um.coeffs) / (2 * h)
    up, um, up2, um2 = continue_in_k(profile, [k + h, k - h, k + 2 * h, k - 2 * h])
    return (8 * (up.coeffs - um.coeffs) - (up2.coeffs - um2.coeffs)) / (12 * h)


class StripeFamily:
    """Two-parameter family ``u_*(xi; k)`` tabulated on a ``k`` interval.

    Coefficients are solved at Chebyshev nodes of ``[k0 - delta, k0 + delta]``
    and interpolated by the Chebyshev polynomial through them.  The profile is
    analytic in ``k``, so values and ``k``-derivatives are accurate to near
    round-off inside the interval.

    Within ``taylor_radius`` of the center a Taylor polynomial anchored on the
    exact center coefficients and ``k``-derivative is used instead, so small
    wavenumber perturbations of the center stripe are resolved to relative
    round-off rather than to the interpolation error.
    """

    TAYLOR_ORDER = 8

    def __init__(self, profile: StripeProfile, delta: float = 0.1, n_k: int = 25,
                 taylor_radius: float = 0.01):
        self.center = profile
        self.delta = delta
        t = np.cos(np.pi * (np.arange(n_k) + 0.5) / n_k)[::-1]
        self.ks = profile.k + delta * t
        profiles = continue_in_k(profile, self.ks)
        table = np.array([p.coeffs for p in profiles])
        self._cheb = np.polynomial.chebyshev.chebfit(t, table, n_k - 1)
        self.k_range = (profile.k - delta, profile.k + delta)
        self.taylor_radius = taylor_radius
        cheb = np.polynomial.chebyshev
        taylor = [profile.coeffs, profile.coeffs_k]
        for j in range(2, self.TAYLOR_ORDER + 1):
            taylor.append(cheb.chebval(0.0, cheb.chebder(self._cheb, j)) / delta**j)
        self._taylor = np.array(taylor)

    def coeffs(self, k, dk: int = 0) -> np.ndarray:
        """Interpolated cosine coefficients, shape ``k.shape + (n_modes,)``."""
        k = np.asarray(k, dtype=float)
        C = self._cheb
        if dk:
            C = np.polynomial.chebyshev.chebder(C, dk) / self.delta**dk
        dkk = (k - self.center.k).ravel()
        out = np.polynomial.chebyshev.chebval(dkk / self.delta, C).T  # (npts, n_modes)
        near = np.abs(dkk) <= self.taylor_radius
        if np.any(near):
            powers = np.zeros((near.sum(), self.TAYLOR_ORDER + 1))
            for j in range(dk, self.TAYLOR_ORDER + 1):
                powers[:, j] = dkk[near] ** (j - dk) / factorial(j - dk)
            out[near] = powers @ self._taylor
        return out.reshape(k.shape + (C.shape[1],))

    def coeffs_increment(self, dk_offset) -> np.ndarray:
        """``coeffs(k0 + dk_offset) - coeffs(k0)``, accurate relative to its own size near ``k0``."""
        off = np.asarray(dk_offset, dtype=float)
        flat = off.ravel()
        out = self.coeffs(self.center.k + flat) - self.center.coeffs
        near = np.abs(flat) <= self.taylor_radius
        if np.any(near):
            powers = np.zeros((near.sum(), self.TAYLOR_ORDER + 1))
            for j in range(1, self.TAYLOR_ORDER + 1):
                powers[:, j] = flat[near] ** j / factorial(j)
            out[near] = powers @ self._taylor
        return out.reshape(off.shape + (out.shape[1],))

    def in_range(self, k) -> bool:
        k = np.asarray(k)
        return bool(np.all((k >= self.k_range[0]) & (k <= self.k_range[1])))

    def evaluate(self, xi, k, dxi: int = 0, dk: int = 0):
        """``d^dxi/dxi d^dk/dk u_*`` at paired arrays ``xi`` and ``k``.

        At the tabulated center the exact center-profile coefficients are
        used, so the unperturbed stripe is reproduced to round-off.
        """
        xi = np.asarray(xi, dtype=float)
        k = np.broadcast_to(np.asarray(k, dtype=float), xi.shape)
        C = self.coeffs(k.ravel(), dk)  # (npts, n_modes)
        m = np.arange(C.shape[1]).astype(float)
        arg = np.outer(xi.ravel(), m)
        w = C * m**dxi if dxi else C
        r = dxi % 4
        if r == 0:
            vals = np.sum(np.cos(arg) * w, axis=1)
        elif r == 1:
            vals = -np.sum(np.sin(arg) * w, axis=1)
        elif r == 2:
            vals = -np.sum(np.cos(arg) * w, axis=1)
        else:
            vals = np.sum(np.sin(arg) * w, axis=1)
        return vals.reshape(xi.shape)
