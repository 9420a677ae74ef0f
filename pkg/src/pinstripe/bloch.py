"""Bloch-wave analysis of the stripe linearization near the translation mode.

Wavevectors ``nu`` are physical (conjugate to ``x``), so the Bloch wave is
``exp(i nu . x) e(nu; k x_1)`` and the symbol of the Fourier mode ``m`` is
``-(1 - (k m + nu_1)^2 - |nu_h|^2)^2 + mu``.  At ``k = 1`` this is the usual
``-((d_xi + i nu_1)^2 - |nu_h|^2 + 1)^2 + mu``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BranchCrossing,
    NegativeDiffusivity,
    SimplicityFailure,
    SolvabilityViolation,
    TruncationTooSmall,
)
from .stripe_core import (
    StripeProfile,
    derivative_series,
    linearization_odd,
    series_inner,
    series_to_exponential,
)

BRANCH_FIT_RADIUS = 0.1


def _as_nu(nu) -> np.ndarray:
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if nu.ndim != 1 or nu.size < 1 or nu.size > 3:
        raise ValueError("nu must be a scalar or a vector of length 1..3")
    return nu


def default_truncation(profile: StripeProfile) -> int:
    """Twice the numerical bandwidth of the profile."""
    return max(8, 2 * profile.bandwidth())


def _square_exponential(profile: StripeProfile) -> np.ndarray:
    """Exponential coefficients of ``u_*^2`` indexed ``-2N..2N``."""
    N = profile.n_modes - 1
    h = series_to_exponential(profile.coeffs, "even", N).real
    return np.convolve(h, h)


@dataclass(frozen=True)
class BlochOperator:
    """Dense matrix of the Bloch linearization on ``exp(i m xi)``, ``|m| <= M``."""

    nu: tuple
    matrix: np.ndarray
    M: int
    k: float = 1.0

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def apply(self, v) -> np.ndarray:
        return self.matrix @ v

    def hermiticity_defect(self) -> float:
        A = self.matrix
        return float(np.abs(A - A.conj().T).max())


def assemble_bloch(profile: StripeProfile, nu=0.0, M: int | None = None) -> BlochOperator:
    nu = _as_nu(nu)
    if M is None:
        M = default_truncation(profile)
    bw = profile.bandwidth()
    if M < bw:
        raise TruncationTooSmall(f"M={M} is below the profile bandwidth {bw}")
    m = np.arange(-M, M + 1)
    k = profile.k
    nu_h2 = float(np.sum(nu[1:] ** 2))
    diag = -((1 - (k * m + nu[0]) ** 2 - nu_h2) ** 2) + profile.mu
    sq = _square_exponential(profile)
    c0 = (sq.size - 1) // 2
    idx = m[:, None] - m[None, :] + c0
    inside = (idx >= 0) & (idx < sq.size)
    T = np.where(inside, sq[np.clip(idx, 0, sq.size - 1)], 0.0)
    A = np.diag(diag) - 3 * T
    A = 0.5 * (A + A.T)
    A.setflags(write=False)
    return BlochOperator(nu=tuple(float(v) for v in nu), matrix=A, M=M, k=k)


def translation_mode(profile: StripeProfile, M: int) -> np.ndarray:
    """Exponential coefficients of ``d u_*/dx = k u_*'(xi)``."""
    c, par = derivative_series(profile.coeffs, "even", 1, profile.k)
    return series_to_exponential(c, par, M)


def _refine_eigenpair(A, lam, v, w, steps=3):
    """Newton refinement of ``(A - lam) v = 0`` under the gauge ``w^H v = w^H v0``.

    The dense eigensolver has a backward error of order ``eps ||A||``, and
    ``||A||`` grows like ``M^4``; the residual here is computed entrywise, so
    the refined pair is accurate to round-off relative to the retained modes.
    """
    n = A.shape[0]
    target = np.vdot(w, v)
    B = np.zeros((n + 1, n + 1), dtype=complex)
    B[n, :n] = w.conj()
    for _ in range(steps):
        r = A @ v - lam * v
        B[:n, :n] = A - lam * np.eye(n)
        B[:n, n] = -v
        rhs = np.concatenate([-r, [target - np.vdot(w, v)]])
        sol = np.linalg.solve(B, rhs)
        v = v + sol[:n]
        lam = lam + sol[n].real
    return lam, v


def _track(A, ref, ambiguity):
    w, V = np.linalg.eigh(A)
    ov = np.abs(V.conj().T @ ref) / np.linalg.norm(ref)
    order = np.argsort(ov)[::-1]
    i, j = order[0], order[1]
    if ov[j] > ambiguity * ov[i]:
        raise BranchCrossing(
            f"eigenvector overlaps {ov[i]:.3f} and {ov[j]:.3f} are not separated"
        )
    return w[i], V[:, i].astype(complex)


@dataclass
class BlochBranch:
    """Critical eigenvalue ``lambda(nu)`` and eigenfunctions on sampled ``nu``.

    Eigenfunctions are exponential coefficients normalized by
    ``<e(nu), u_*'> = ||u_*'||^2`` so that ``e - u_*'`` is orthogonal to the
    translation mode.
    """

    nus: np.ndarray
    lambdas: np.ndarray
    eigenfunctions: np.ndarray
    M: int
    k: float = 1.0
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        dim = self.nus.shape[1]
        cols = ["nu1", "nu2", "nu3"][:dim] + ["lambda"]
        header = dict(self.meta)
        header.update(
            {
                "normalization": "<e, u'> = ||u'||^2",
                "truncation_M": int(self.M),
                "k": float(self.k),
                "columns": cols,
            }
        )
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(",".join(cols) + "\n")
            for nu, lam in zip(self.nus, self.lambdas):
                fh.write(",".join(f"{v:.17g}" for v in (*nu, lam)) + "\n")


def check_simplicity(profile: StripeProfile, M: int | None = None, gap: float = 1e-6):
    """Return ``(lambda_0, sigma)``: the two smallest-magnitude eigenvalues at ``nu = 0``."""
    A = assemble_bloch(profile, 0.0, M).matrix
    w = np.linalg.eigvalsh(A)
    w = w[np.argsort(np.abs(w))]
    if abs(w[1]) <= gap:
        raise SimplicityFailure(
            f"second eigenvalue {w[1]:.3e} within {gap:g} of zero at nu = 0"
        )
    return float(w[0]), float(w[1])


def critical_branch(
    profile: StripeProfile,
    nu_samples,
    M: int | None = None,
    ambiguity: float = 0.5,
    gap: float = 1e-6,
    max_step: float = 0.02,
) -> BlochBranch:
    """Continue the eigenvalue through ``0`` at ``nu = 0`` by eigenvector overlap.

    Samples are processed in order of ``|nu|``; each is seeded from the
    already-computed sample nearest to it, walking in steps of at most
    ``max_step`` when the gap is larger.  The result is sorted
    lexicographically on ``nu``.
    """
    if M is None:
        M = default_truncation(profile)
    nus = np.asarray(nu_samples, dtype=float)
    if nus.ndim == 1:
        nus = nus[:, None]
    check_simplicity(profile, M, gap)
    up = translation_mode(profile, M)
    norm2 = np.vdot(up, up).real
    done_nu = [np.zeros(nus.shape[1])]
    done_vec = [up]
    lams = np.empty(len(nus))
    vecs = np.empty((len(nus), 2 * M + 1), dtype=complex)
    for i in np.argsort(np.linalg.norm(nus, axis=1), kind="stable"):
        nu = nus[i]
        near = int(np.argmin([np.linalg.norm(nu - d) for d in done_nu]))
        ref = done_vec[near]
        # unrecorded intermediate steps keep consecutive overlaps close to 1
        n_sub = int(np.ceil(np.linalg.norm(nu - done_nu[near]) / max_step))
        for t in np.arange(1, n_sub) / n_sub:
            mid = done_nu[near] + t * (nu - done_nu[near])
            ref = _track(assemble_bloch(profile, mid, M).matrix, ref, ambiguity)[1]
        A = assemble_bloch(profile, nu, M).matrix
        lam, v = _track(A, ref, ambiguity)
        v = v * (norm2 / np.vdot(up, v))
        lam, v = _refine_eigenpair(A, lam, v, up)
        lams[i] = lam
        vecs[i] = v
        done_nu.append(nu)
        done_vec.append(v)
    order = np.lexsort(nus.T[::-1])
    return BlochBranch(nus=nus[order], lambdas=lams[order], eigenfunctions=vecs[order],
                       M=M, k=profile.k)


# ---------------------------------------------------------------------------
# diffusivities


@dataclass(frozen=True)
class EffectiveDiffusivities:
    d_par: float
    d_perp: float
    method: str

    def __post_init__(self):
        if self.method not in ("integral_formula", "curvature_fit"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def positive(self) -> bool:
        return self.d_par > 0 and self.d_perp > 0

    def to_dict(self) -> dict:
        return {"d_par": float(self.d_par), "d_perp": float(self.d_perp),
                "method": self.method}


def _derivs(coeffs, k, orders):
    return {p: derivative_series(coeffs, "even", p, k) for p in orders}


def cell_integrals(profile: StripeProfile) -> dict:
    """Period integrals (over ``xi`` in ``[0, 2 pi]``) entering the diffusivities.

    Derivatives are physical (``d/dx = k d/dxi``) and ``e1 = k u_{*,k}`` is
    the first-order Bloch corrector, which equals ``u_{*,k}`` at ``k = 1``.
    """
    k = profile.k
    u = _derivs(profile.coeffs, k, (1, 2))
    e1 = _derivs(k * profile.coeffs_k, k, (1, 2))
    ip = lambda a, b: series_inner(*a, *b)  # noqa: E731
    return {
        "u1u1": ip(u[1], u[1]),
        "u2u2": ip(u[2], u[2]),
        "u2e2": ip(u[2], e1[2]),
        "u1e1": ip(u[1], e1[1]),
    }


def diffusivities_integral(profile: StripeProfile) -> EffectiveDiffusivities:
    I = cell_integrals(profile)
    n2 = I["u1u1"]
    d_perp = 2.0 / n2 * (I["u2u2"] - I["u1u1"])
    d_par = 2.0 / n2 * (2 * (I["u2e2"] - I["u1e1"]) + 3 * I["u2u2"] - I["u1u1"])
    out = EffectiveDiffusivities(d_par, d_perp, "integral_formula")
    if not out.positive:
        warnings.warn(
            f"non-positive diffusivity (d_par={d_par:.4g}, d_perp={d_perp:.4g}) "
            f"at mu={profile.mu}, k={profile.k}",
            NegativeDiffusivity,
            stacklevel=2,
        )
    return out


def _fit_curvature(s, lam, degree):
    """Intercept of a polynomial fit of ``lam / s^2`` in ``s^2``."""
    y = lam / s**2
    V = np.vander(s**2, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    return -coef[0], coef


def diffusivities_fit(
    profile: StripeProfile,
    radius: float = BRANCH_FIT_RADIUS,
    n_samples: int = 24,
    degree: int = 6,
    M: int | None = None,
) -> EffectiveDiffusivities:
    """Negative curvature of ``lambda`` along ``nu_1`` and ``nu_2`` from a branch fit."""
    s = np.linspace(radius / n_samples, radius, n_samples)
    z = np.zeros_like(s)
    b1 = critical_branch(profile, np.column_stack([s, z]), M)
    b2 = critical_branch(profile, np.column_stack([z, s]), M)
    d_par, _ = _fit_curvature(b1.nus[:, 0], b1.lambdas, degree)
    d_perp, _ = _fit_curvature(b2.nus[:, 1], b2.lambdas, degree)
    return EffectiveDiffusivities(float(d_par), float(d_perp), "curvature_fit")


# ---------------------------------------------------------------------------
# second-order correctors


@dataclass(frozen=True)
class Correctors:
    """Sine coefficients (physical units) of ``e21`` and ``e2h``; both are odd."""

    e21: np.ndarray
    e2h: np.ndarray
    solvability: tuple


def _bordered_odd(L, b, rhs):
    n = L.shape[0]
    B = np.zeros((n + 1, n + 1))
    B[:n, :n] = L
    B[:n, n] = b
    B[n, :n] = b
    sol = np.linalg.solve(B, np.concatenate([rhs, [0.0]]))
    return sol[:n], sol[n]


def corrector_rhs(profile: StripeProfile, diff: EffectiveDiffusivities):
    """Sine coefficients of the right-hand sides defining ``e21`` and ``e2h``."""
    k = profile.k
    u = _derivs(profile.coeffs, k, (1, 3))
    e1 = _derivs(k * profile.coeffs_k, k, (1, 3))
    r21 = diff.d_par * u[1][0] + 4 * (e1[3][0] + e1[1][0]) + 2 * (3 * u[3][0] + u[1][0])
    r2h = diff.d_perp * u[1][0] + 2 * (u[3][0] + u[1][0])
    return r21, r2h


def correctors(
    profile: StripeProfile, diff: EffectiveDiffusivities, tol: float = 1e-8
) -> Correctors:
    """Solve ``L(0) e = rhs`` on odd functions with ``e`` orthogonal to ``u_*'``.

    Raises :class:`SolvabilityViolation` if a right-hand side has a relative
    component along ``u_*'`` larger than ``tol``.
    """
    L = linearization_odd(profile)
    up = derivative_series(profile.coeffs, "even", 1, profile.k)[0]
    out = []
    defects = []
    for rhs in corrector_rhs(profile, diff):
        proj = series_inner(rhs, "odd", up, "odd")
        defect = proj / np.sqrt(series_inner(up, "odd", up, "odd") *
                                max(series_inner(rhs, "odd", rhs, "odd"), 1e-300))
        defects.append(float(proj))
        if abs(defect) > tol:
            raise SolvabilityViolation(
                f"right-hand side not orthogonal to u_*' (relative {defect:.3e})"
            )
        e, _ = _bordered_odd(L, up[1:], rhs[1:])
        out.append(np.concatenate([[0.0], e]))
    return Correctors(e21=out[0], e2h=out[1], solvability=tuple(defects))


def expansion_prediction(profile, corr: Correctors, nu, M) -> np.ndarray:
    """``u_*' + i nu_1 e1 - nu_1^2 e21 - |nu_h|^2 e2h`` as exponential coefficients."""
    nu = _as_nu(nu)
    k = profile.k
    up = translation_mode(profile, M)
    e1 = series_to_exponential(k * profile.coeffs_k, "even", M)
    e21 = series_to_exponential(corr.e21, "odd", M)
    e2h = series_to_exponential(corr.e2h, "odd", M)
    return up + 1j * nu[0] * e1 - nu[0] ** 2 * e21 - np.sum(nu[1:] ** 2) * e2h


def expansion_residuals(profile, corr: Correctors, branch: BlochBranch) -> np.ndarray:
    """``||e(nu) - expansion||`` (coefficient 2-norm) at each branch sample."""
    return np.array(
        [
            np.linalg.norm(e - expansion_prediction(profile, corr, nu, branch.M))
            for nu, e in zip(branch.nus, branch.eigenfunctions)
        ]
    )


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    nus: np.ndarray
    max_real: np.ndarray
    worst_off_origin: float
    exclusion_radius: float

    @property
    def stable(self) -> bool:
        return self.worst_off_origin < 0


def _top_eigenvalue(A):
    w, V = np.linalg.eigh(A)
    v = V[:, -1].astype(complex)
    lam, _ = _refine_eigenpair(A, w[-1], v, v, steps=2)
    return lam


def stability_scan(
    profile: StripeProfile,
    nu_grid: Sequence,
    M: int | None = None,
    exclusion_radius: float = 0.0,
) -> StabilityReport:
    """Largest eigenvalue of ``L(nu)`` at every grid point.

    The origin reports exactly 0; points with ``|nu| <= exclusion_radius``
    are left out of ``worst_off_origin``.
    """
    nus = np.asarray(nu_grid, dtype=float)
    if nus.ndim == 1:
        nus = nus[:, None]
    vals = np.empty(len(nus))
    for i, nu in enumerate(nus):
        if not np.any(nu):
            vals[i] = 0.0
            continue
        vals[i] = _top_eigenvalue(assemble_bloch(profile, nu, M).matrix)
    r = np.linalg.norm(nus, axis=1)
    off = (r > exclusion_radius) & (r > 0)
    worst = float(vals[off].max()) if np.any(off) else float("-inf")
    return StabilityReport(nus=nus, max_real=vals, worst_off_origin=worst,
                           exclusion_radius=exclusion_radius)
