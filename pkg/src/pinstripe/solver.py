"""Direct 2D solves of the forced stationary problem and their post-processing.

The box is doubly periodic with ``L_x = 2 pi P``.  On such a box the 2D
discrete Fourier index along ``x_1`` factors as ``j = m P + l`` (carrier mode
``m`` modulo ``M = N_x / P`` and Bloch fraction ``nu_1 = l / P``), so any
operator with ``2 pi``-periodic coefficients in ``x_1`` and constant
coefficients in ``x_2`` is block diagonal with ``M x M`` blocks.  This is used
for the discrete Bloch transform, the mode filters, and as an exact inverse of
the stripe Jacobian that preconditions the Newton-Krylov iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .cutoff import CutoffFunction
from .errors import (
    BranchUnavailable,
    ConfigError,
    IllConditionedFit,
    IncommensurateBox,
    JacobianSingular,
    KappaOutOfTable,
    NewtonDiverged,
    PhaseUnwrapFailure,
    StepUnstable,
)
from .farfield import AnisotropicGreens, DipolePhase
from .grids import SpectralGrid2D
from .pinning import Inhomogeneity
from .stripe_core import StripeFamily, StripeProfile, eval_cosine_series

# ---------------------------------------------------------------------------
# discrete Bloch transform


@dataclass(frozen=True)
class BlochLattice:
    """Index bookkeeping for ``j_1 = m P + l (mod N_x)``."""

    P: int
    M: int
    l: np.ndarray  # Bloch fractions times P, in [-P/2, P/2)
    m: np.ndarray  # carrier modes, in [-M/2, M/2)
    j1: np.ndarray  # (P, M) FFT row index
    k1: np.ndarray  # (P, M) wavenumber of that row
    k2: np.ndarray  # (N_y,)

    @property
    def nu1(self) -> np.ndarray:
        return self.l / self.P

    @classmethod
    def of(cls, grid: SpectralGrid2D) -> "BlochLattice":
        P = grid.periods
        if P is None or grid.Nx % P:
            raise IncommensurateBox(
                f"Lx = {grid.Lx:.6g} must be 2 pi times an integer dividing Nx = {grid.Nx}")
        M = grid.Nx // P
        l = np.arange(-(P // 2), P - P // 2)
        m = np.arange(-(M // 2), M - M // 2)
        j1 = np.mod(np.add.outer(l, m * P), grid.Nx)
        kx, ky = grid.wavenumbers()
        return cls(P, M, l, m, j1, kx[j1], ky)


def discrete_bloch(u, grid: SpectralGrid2D) -> np.ndarray:
    """Coefficients ``B[l, m, j_2]`` with ``sum |B|^2 = mean u^2`` (Parseval)."""
    lat = BlochLattice.of(grid)
    U = np.fft.fft2(u) / u.size
    return U[lat.j1, :]


def inverse_bloch(coeffs, grid: SpectralGrid2D) -> np.ndarray:
    lat = BlochLattice.of(grid)
    U = np.empty(grid.shape, dtype=complex)
    U[lat.j1, :] = coeffs
    return np.real(np.fft.ifft2(U) * U.size)


# ---------------------------------------------------------------------------
# stripe Jacobian in Bloch blocks


def _linear_symbol(grid: SpectralGrid2D, mu: float) -> np.ndarray:
    kx, ky = grid.wavenumbers()
    K2 = np.add.outer(kx**2, ky**2)
    return -((1 - K2) ** 2) + mu


class StripeBlocks:
    """``L_* = -(Delta + 1)^2 + mu - 3 u_*(x_1 + a0)^2`` on the grid, block by block.

    Blocks are indexed ``(l, j_2)`` and act on the carrier index ``m``; they are
    Hermitian and are stored through their eigen-decomposition.
    """

    def __init__(self, profile: StripeProfile, grid: SpectralGrid2D, a0: float = 0.0):
        if profile.k != 1.0:
            raise ConfigError("the box is commensurate with unit-wavenumber stripes only")
        self.grid = grid
        self.lat = lat = BlochLattice.of(grid)
        self.profile = profile
        self.a0 = a0
        x1 = grid.axes[0][: lat.M]
        V = 3 * eval_cosine_series(profile.coeffs, 0, x1 + a0) ** 2
        Vt = np.fft.fft(V) / lat.M
        diff = np.mod(np.subtract.outer(lat.m, lat.m), lat.M)  # (M, M)
        coupling = Vt[diff]
        K2 = lat.k1[:, None, :] ** 2 + lat.k2[None, :, None] ** 2  # (P, Ny, M)
        diag = -((1 - K2) ** 2) + profile.mu
        A = -np.broadcast_to(coupling, (lat.P, grid.Ny, lat.M, lat.M)).astype(complex)
        idx = np.arange(lat.M)
        A[..., idx, idx] += diag
        self.eigenvalues, self.eigenvectors = np.linalg.eigh(A)
        self._stripe = eval_cosine_series(profile.coeffs, 0, grid.mesh()[0] + a0)
        self._sym = _linear_symbol(grid, profile.mu)

    def to_blocks(self, u) -> np.ndarray:
        """``(P, Ny, M)`` block vectors of a grid field."""
        return np.transpose(discrete_bloch(u, self.grid), (0, 2, 1))

    def from_blocks(self, b) -> np.ndarray:
        return inverse_bloch(np.transpose(b, (0, 2, 1)), self.grid)

    def apply_grid(self, v) -> np.ndarray:
        """``L_* v`` evaluated pseudo-spectrally on the grid."""
        return np.real(np.fft.ifft2(self._sym * np.fft.fft2(v))) - 3 * self._stripe**2 * v

    def apply_blocks(self, v) -> np.ndarray:
        """``L_* v`` through the block eigen-decomposition."""
        Q, lam = self.eigenvectors, self.eigenvalues
        b = self.to_blocks(v)
        c = np.einsum("...mk,...m->...k", Q.conj(), b)
        return self.from_blocks(np.einsum("...mk,...k->...m", Q, lam * c))

    def solve(self, r, floor: float) -> np.ndarray:
        """Regularized inverse: eigenvalues with ``|lambda| < floor`` are set to ``-floor``."""
        Q, lam = self.eigenvectors, self.eigenvalues
        lam = np.where(np.abs(lam) < floor, -floor, lam)
        b = self.to_blocks(r)
        c = np.einsum("...mk,...m->...k", Q.conj(), b) / lam
        return self.from_blocks(np.einsum("...mk,...k->...m", Q, c))

    def critical(self):
        """Largest eigenvalue and its eigenvector in every block."""
        return self.eigenvalues[..., -1], self.eigenvectors[..., :, -1]


# ---------------------------------------------------------------------------
# mode filters


@dataclass
class ModeFilterPair:
    """Smoothed spectral projections onto the critical branch, ``P_{0,r}`` and ``P_{h,r}``."""

    r: float
    blocks: StripeBlocks
    cutoff_recipe: str = "quintic"
    min_gap: float = 1e-3
    weights: np.ndarray = field(init=False, repr=False)
    vectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lat = self.blocks.lat
        nu = np.sqrt(lat.nu1[:, None] ** 2 + lat.k2[None, :] ** 2)  # (P, Ny)
        self.weights = CutoffFunction(self.r, self.cutoff_recipe)(nu)
        lam = self.blocks.eigenvalues
        need = self.weights > 0
        gap = lam[..., -1] - lam[..., -2]
        if np.any(gap[need] < self.min_gap):
            raise BranchUnavailable("critical eigenvalue not separated on the filter support")
        self.vectors = self.blocks.eigenvectors[..., :, -1]

    def with_radius(self, r: float) -> "ModeFilterPair":
        return ModeFilterPair(r, self.blocks, self.cutoff_recipe, self.min_gap)

    def coefficient(self, u) -> np.ndarray:
        """``chi_r(nu) <B u(nu), e(nu)>`` on the lattice, shape ``(P, Ny)``."""
        b = self.blocks.to_blocks(u)
        return self.weights * np.einsum("...m,...m->...", self.vectors.conj(), b)

    def p0(self, u) -> np.ndarray:
        c = self.coefficient(u)
        return self.blocks.from_blocks(c[..., None] * self.vectors)

    def ph(self, u) -> np.ndarray:
        return u - self.p0(u)


@dataclass
class FilteredField:
    u0: np.ndarray
    uh: np.ndarray
    envelope: np.ndarray
    remainder: np.ndarray


def apply_mode_filters(u, filters: ModeFilterPair) -> FilteredField:
    """Split ``u = u0 + uh`` and ``u = u_*'(x_1) w0 + wh`` with ``w0`` slowly varying."""
    blocks = filters.blocks
    grid = blocks.grid
    lat = blocks.lat
    c = filters.coefficient(u)
    u0 = blocks.from_blocks(c[..., None] * filters.vectors)
    # envelope: divide the branch coefficient by the overlap with u_*'
    up = eval_cosine_series(blocks.profile.coeffs, 1, grid.mesh()[0] + blocks.a0)
    dup = blocks.to_blocks(up)[lat.P // 2, 0]  # nu = 0 block (l = 0, j2 = 0)
    overlap = np.einsum("...m,m->...", filters.vectors.conj(), dup)
    ok = filters.weights > 0
    env_hat = np.zeros_like(c)
    env_hat[ok] = c[ok] / overlap[ok]
    # the envelope lives at wavenumbers (nu1, nu2), i.e. carrier index m = 0
    E = np.zeros(grid.shape, dtype=complex)
    m0 = int(np.nonzero(lat.m == 0)[0][0])
    E[lat.j1[:, m0], :] = env_hat
    envelope = np.real(np.fft.ifft2(E) * E.size)
    return FilteredField(u0, u - u0, envelope, u - up * envelope)


# ---------------------------------------------------------------------------
# Newton-Krylov


def stationary_residual(u, forcing, mu: float, grid: SpectralGrid2D) -> np.ndarray:
    """``F(u) = -(Delta + 1)^2 u + mu u - u^3 + forcing``."""
    sym = _linear_symbol(grid, 0.0)
    return np.real(np.fft.ifft2(sym * np.fft.fft2(u))) + mu * u - u**3 + forcing


@dataclass
class DeformedSolution:
    u: np.ndarray
    grid: SpectralGrid2D
    eps: float
    g_ref: dict
    newton_residual: float
    history: list
    gmres_iterations: list
    a0_guess: float
    guess: str
    extracted_a0: float | None = None
    extracted_dipole: np.ndarray | None = None
    phase_field: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    def convergence_orders(self) -> list:
        """``log(r_{k+1}/r_k) / log(r_k/r_{k-1})`` along the residual history."""
        r = np.asarray(self.history, dtype=float)
        out = []
        for k in range(1, len(r) - 1):
            if r[k] < r[k - 1] and r[k] > 0 and r[k + 1] > 0:
                out.append(float(np.log(r[k + 1] / r[k]) / np.log(r[k] / r[k - 1])))
        return out

    @property
    def quadratic_tail(self) -> bool:
        """At least one late step converges with order >= 1.8, or the last
        step lands below ``r_k^2`` times a modest constant."""
        r = self.history
        orders = self.convergence_orders()
        if orders and max(orders[-2:]) >= 1.8:
            return True
        return len(r) >= 2 and r[-2] < 1e-2 and r[-1] <= 10 * r[-2] ** 2

    def metrics(self) -> dict:
        return {
            "eps": self.eps,
            "iterations": self.iterations,
            "residuals": [float(v) for v in self.history],
            "gmres_iterations": list(self.gmres_iterations),
            "a0_guess": self.a0_guess,
            "guess": self.guess,
            "a0_meas": self.extracted_a0,
            "a_meas": None if self.extracted_dipole is None
            else [float(v) for v in self.extracted_dipole],
        }


def predicted_guess(profile: StripeProfile, grid: SpectralGrid2D, a0: float,
                    phase: DipolePhase | None = None, family: StripeFamily | None = None):
    """``u_*(x_1 + a0 + Theta; kappa)`` or the pure translate when no phase is given."""
    X = grid.mesh()
    if phase is None:
        return eval_cosine_series(profile.coeffs, 0, X[0] + a0)
    family = family or StripeFamily(profile)
    psi = X[0] + a0 + phase.theta(*X)
    kappa = phase.kappa(*X)
    if not family.in_range(kappa):
        raise KappaOutOfTable(
            f"kappa in [{kappa.min():.3f}, {kappa.max():.3f}] leaves the stripe table")
    return family.evaluate(psi, kappa)


def newton_solve(
    g: Inhomogeneity,
    eps: float,
    profile: StripeProfile,
    grid: SpectralGrid2D,
    a0_init: float,
    a_init=None,
    guess: str | np.ndarray = "ansatz",
    tol: float = 1e-10,
    max_iter: int = 12,
    precond: str = "bloch",
    gmres_rtol: float = 1e-3,
    gmres_restart: int = 60,
    gmres_maxiter: int = 10,
    kernel_floor: float = 1e-8,
    blocks: StripeBlocks | None = None,
) -> DeformedSolution:
    """Newton-GMRES for ``F(u) + eps g = 0`` starting from the predicted ansatz.

    ``guess="ansatz"`` uses the predicted phase ``a0 + Theta(a)``; when the
    phase gradient leaves the stripe table (near a strong core) the solver
    falls back to the translate ``u_*(x_1 + a0)`` and records that choice.
    Linear solves are inexact with forcing term ``min(gmres_rtol, |F|_inf)``,
    which keeps the tail quadratic.
    """
    mu = profile.mu
    forcing = eps * g.sample(grid)
    used = "array"
    if isinstance(guess, np.ndarray):
        u = guess.copy()
    elif guess == "translate" or a_init is None or eps == 0:
        u = predicted_guess(profile, grid, a0_init)
        used = "translate"
    elif guess == "ansatz":
        G = AnisotropicGreens(*a_init[1]) if isinstance(a_init, tuple) else None
        if G is None:
            raise ConfigError("ansatz guess needs (a, (d_par, d_perp))")
        try:
            u = predicted_guess(profile, grid, a0_init,
                                DipolePhase(tuple(eps * np.asarray(a_init[0])), G))
            used = "ansatz"
        except KappaOutOfTable:
            u = predicted_guess(profile, grid, a0_init)
            used = "translate (ansatz left the stripe table)"
    else:
        raise ConfigError(f"unknown guess {guess!r}")

    sym = _linear_symbol(grid, mu)
    if precond == "bloch":
        blocks = blocks if blocks is not None and blocks.a0 == a0_init else \
            StripeBlocks(profile, grid, a0_init)

        def prec(r):
            return blocks.solve(r.reshape(grid.shape), kernel_floor).ravel()
    elif precond == "diagonal":
        shift = -(mu + 3 * 0.5 * float(np.mean(u**2)))
        dsym = np.where(np.abs(sym - 3 * np.mean(u**2)) > 1e-2, sym - 3 * np.mean(u**2), shift)

        def prec(r):
            return np.real(np.fft.ifft2(np.fft.fft2(r.reshape(grid.shape)) / dsym)).ravel()
    else:
        raise ConfigError(f"unknown preconditioner {precond!r}")

    F = stationary_residual(u, forcing, mu, grid)
    hist = [float(np.max(np.abs(F)))]
    kry = []
    n = u.size
    Pop = LinearOperator((n, n), matvec=prec, dtype=float)
    while hist[-1] > tol:
        if len(hist) > max_iter:
            raise NewtonDiverged(f"no convergence in {max_iter} Newton steps", hist)
        u2 = u**2

        def jac(v, u2=u2):
            v = v.reshape(grid.shape)
            return (np.real(np.fft.ifft2(sym * np.fft.fft2(v))) - 3 * u2 * v).ravel()

        J = LinearOperator((n, n), matvec=jac, dtype=float)
        count = [0]
        eta = min(gmres_rtol, hist[-1])
        b = -F.ravel()
        du, info = gmres(J, b, rtol=eta, atol=0.0, restart=gmres_restart, maxiter=gmres_maxiter,
                         M=Pop, callback=lambda *_: count.__setitem__(0, count[0] + 1),
                         callback_type="pr_norm")
        kry.append(count[0])
        lin_res = np.linalg.norm(jac(du) - b) / np.linalg.norm(b)
        if info != 0 and lin_res > 0.5:
            raise JacobianSingular(
                f"Krylov solve stalled at relative residual {lin_res:.2e}", )
        du = du.reshape(grid.shape)
        step = 1.0
        for _ in range(8):
            trial = u + step * du
            Ft = stationary_residual(trial, forcing, mu, grid)
            rt = float(np.max(np.abs(Ft)))
            if np.isfinite(rt) and rt < hist[-1]:
                break
            step /= 2
        else:
            raise NewtonDiverged("line search failed to reduce the residual", hist)
        u, F = trial, Ft
        hist.append(rt)
    return DeformedSolution(u, grid, eps, g.to_dict() if g.kind != "custom" else {"kind": "custom"},
                            hist[-1], hist, kry, a0_init, used)


# ---------------------------------------------------------------------------
# phase extraction and dipole fit


@dataclass
class PhaseExtraction:
    a0: float
    phase_field: np.ndarray
    amplitude: np.ndarray


def _analytic_signal(u, grid: SpectralGrid2D, method: str, bandwidth: float):
    kx, _ = grid.wavenumbers()
    if method == "analytic":
        w = np.where(kx > 0, 2.0, np.where(kx == 0, 1.0, 0.0))
    elif method == "bandpass":
        w = 2 * CutoffFunction(bandwidth / 2)(kx - 1.0)
    else:
        raise ConfigError(f"unknown demodulation method {method!r}")
    return np.fft.ifft2(w[:, None] * np.fft.fft2(u))


def extract_phase(u, profile: StripeProfile, grid: SpectralGrid2D, core_radius: float = 1.0,
                  method: str = "analytic", bandwidth: float = 0.25,
                  min_amplitude: float = 0.25, harmonic_sweeps: int = 8) -> PhaseExtraction:
    """Local phase by complex demodulation around the carrier ``k_1 = 1``.

    ``method="analytic"`` keeps every ``k_1 > 0`` (the analytic signal in
    ``x_1``) and removes the stripe harmonics exactly: the analytic signal of
    ``u_*(psi)`` is ``sum_m c_m e^{i m psi}``, so ``psi`` solves
    ``psi + arg h(psi) = arg z`` with ``h = sum_m c_m e^{i (m-1) psi}``.
    ``method="bandpass"`` keeps ``|k_1 - 1| < bandwidth`` with a smooth taper,
    which needs no harmonic correction but smooths the phase over a length of
    order ``1 / bandwidth``.

    ``a0`` is the circular mean over ``|x| < core_radius`` in ``[0, 2 pi)``;
    the returned phase field is the remainder, wrapped to ``(-pi, pi]``.
    """
    if profile.k != 1.0:
        raise ConfigError("demodulation assumes the unit carrier wavenumber")
    X = grid.mesh()
    z = _analytic_signal(u, grid, method, bandwidth) * np.exp(-1j * X[0])
    amp = np.abs(z) / abs(profile.coeffs[1])
    if np.min(amp) < min_amplitude:
        raise PhaseUnwrapFailure(f"demodulated amplitude drops to {np.min(amp):.2f}")
    base = np.angle(z)
    theta = base.copy()
    if method == "analytic":
        c = np.asarray(profile.coeffs)[1:]
        odd = np.arange(c.size)
        for _ in range(harmonic_sweeps):
            h = np.exp(1j * np.multiply.outer(theta + X[0], odd)) @ c
            theta = base - np.angle(h)
    core = np.hypot(*X) < core_radius
    if not np.any(core):
        raise ConfigError("core radius smaller than the grid spacing")
    a0 = float(np.mod(np.angle(np.mean(np.exp(1j * theta[core]))), 2 * np.pi))
    theta = np.angle(np.exp(1j * (theta - a0)))
    # the phase must stay single valued: neighbours differ by well under pi
    jumps = max(np.max(np.abs(np.diff(theta, axis=0))), np.max(np.abs(np.diff(theta, axis=1))))
    if jumps > np.pi / 2:
        raise PhaseUnwrapFailure(f"phase jumps by {jumps:.2f} between neighbours")
    return PhaseExtraction(a0, theta, amp)


@dataclass
class DipoleFit:
    a: np.ndarray
    relative_residual: float
    dipole_norm: float
    residual_norm: float
    n_points: int
    condition: float


def fit_dipole(phase_field, G: AnisotropicGreens, grid: SpectralGrid2D,
               annulus=(2.0, None), max_condition: float = 1e8) -> DipoleFit:
    """Least-squares ``phase ~ a_1 d_1 G + a_2 d_2 G`` on ``r_in < |x| < r_out``."""
    X = grid.mesh()
    r = np.hypot(*X)
    r_in, r_out = annulus
    r_out = grid.Lx / 4 if r_out is None else r_out
    if r_out > min(grid.Lx, grid.Ly) / 4 + 1e-12:
        warnings.warn("fit annulus reaches beyond a quarter box", stacklevel=2)
    sel = (r > r_in) & (r < r_out)
    if sel.sum() < 10:
        raise IllConditionedFit("annulus contains fewer than 10 grid points")
    pts = (X[0][sel], X[1][sel])
    B = np.column_stack([G.derivative(pts, (1, 0)), G.derivative(pts, (0, 1))])
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedFit(f"dipole basis condition number {cond:.2e}")
    y = phase_field[sel]
    a, *_ = np.linalg.lstsq(B, y, rcond=None)
    fit = B @ a
    dn = float(np.linalg.norm(fit))
    rn = float(np.linalg.norm(y - fit))
    return DipoleFit(a, rn / dn if dn > 0 else np.inf, dn, rn, int(sel.sum()), float(cond))


# ---------------------------------------------------------------------------
# time relaxation


@dataclass
class RelaxResult:
    u: np.ndarray
    energies: list
    residuals: list

    @property
    def energy_monotone(self) -> bool:
        e = np.asarray(self.energies)
        return bool(np.all(np.diff(e) <= 1e-12 * np.maximum(1.0, np.abs(e[:-1]))))


def energy(u, forcing, mu: float, grid: SpectralGrid2D) -> float:
    """``int 1/2 ((Delta + 1) u)^2 - mu/2 u^2 + u^4/4 - forcing u``."""
    kx, ky = grid.wavenumbers()
    K2 = np.add.outer(kx**2, ky**2)
    Lu = np.real(np.fft.ifft2((1 - K2) * np.fft.fft2(u)))
    dens = 0.5 * Lu**2 - 0.5 * mu * u**2 + 0.25 * u**4 - forcing * u
    return grid.integrate(dens)


def time_relax(u0, g: Inhomogeneity | None, eps: float, steps: int, dt: float,
               grid: SpectralGrid2D, mu: float, record_every: int = 1) -> RelaxResult:
    """First-order exponential time differencing: linear part exact, cubic term explicit."""
    forcing = eps * g.sample(grid) if g is not None and eps else np.zeros(grid.shape)
    L = _linear_symbol(grid, mu)
    E = np.exp(dt * L)
    phi = np.where(np.abs(L) > 1e-12, (E - 1) / np.where(L == 0, 1, L), dt)
    u = np.array(u0, dtype=float)
    energies = [energy(u, forcing, mu, grid)]
    res = [float(np.max(np.abs(stationary_residual(u, forcing, mu, grid))))]
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(steps):
            N = -(u**3) + forcing
            u = np.real(np.fft.ifft2(E * np.fft.fft2(u) + phi * np.fft.fft2(N)))
            if not np.all(np.isfinite(u)):
                raise StepUnstable(f"non-finite field after {s + 1} steps (dt={dt})")
            if (s + 1) % record_every == 0 or s + 1 == steps:
                energies.append(energy(u, forcing, mu, grid))
                res.append(float(np.max(np.abs(stationary_residual(u, forcing, mu, grid)))))
    return RelaxResult(u, energies, res)
