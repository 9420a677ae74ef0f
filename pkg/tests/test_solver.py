import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinstripe.cutoff import CutoffFunction
from pinstripe.errors import (
    BranchUnavailable,
    IllConditionedFit,
    IncommensurateBox,
    NewtonDiverged,
    PhaseUnwrapFailure,
    StepUnstable,
)
from pinstripe.farfield import AnisotropicGreens, DipolePhase
from pinstripe.grids import SpectralGrid2D
from pinstripe.pinning import Inhomogeneity
from pinstripe.solver import (
    BlochLattice,
    ModeFilterPair,
    StripeBlocks,
    apply_mode_filters,
    discrete_bloch,
    extract_phase,
    fit_dipole,
    inverse_bloch,
    newton_solve,
    predicted_guess,
    stationary_residual,
    time_relax,
)
from pinstripe.stripe_core import StripeFamily, eval_cosine_series

SMALL = SpectralGrid2D.commensurate(128, 64, 8, Ly=16 * np.pi)
DESK = SpectralGrid2D.commensurate(512, 512, 32)
GAUSS = Inhomogeneity.gaussian(1.0, (0.0, 0.0), (2.0, 2.0))


@pytest.fixture(scope="module")
def small_blocks(profile):
    return StripeBlocks(profile, SMALL, 0.4)


@pytest.fixture(scope="module")
def desk_blocks(profile):
    return StripeBlocks(profile, DESK, np.pi)


@pytest.fixture(scope="module")
def desk_solution(profile, desk_blocks):
    return newton_solve(GAUSS, 0.02, profile, DESK, np.pi, blocks=desk_blocks)


def random_field(grid, seed):
    return np.random.default_rng(seed).standard_normal(grid.shape)


# --- discrete Bloch ---------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_bloch_roundtrip_and_parseval(seed):
    u = random_field(SMALL, seed)
    c = discrete_bloch(u, SMALL)
    assert np.abs(inverse_bloch(c, SMALL) - u).max() < 1e-13
    assert np.sum(np.abs(c) ** 2) == pytest.approx(np.mean(u**2), rel=1e-12)


def test_stripe_is_supported_at_zero_bloch_fraction(profile):
    lat = BlochLattice.of(SMALL)
    u = eval_cosine_series(profile.coeffs, 0, SMALL.mesh()[0])
    c = discrete_bloch(u, SMALL)
    l0 = int(np.nonzero(lat.l == 0)[0][0])
    mask = np.ones(c.shape, bool)
    mask[l0, :, 0] = False
    assert np.abs(c[mask]).max() < 1e-15


def test_modulated_translation_mode_sits_at_one_fraction(profile):
    lat = BlochLattice.of(SMALL)
    X = SMALL.mesh()
    nu = 3 / lat.P
    u = np.cos(nu * X[0]) * eval_cosine_series(profile.coeffs, 1, X[0])
    c = discrete_bloch(u, SMALL)
    weight = np.sum(np.abs(c) ** 2, axis=(1, 2))
    assert set(np.nonzero(weight > 1e-20)[0]) == {int(np.nonzero(lat.l == l)[0][0]) for l in (-3, 3)}


def test_incommensurate_box_is_rejected():
    with pytest.raises(IncommensurateBox):
        discrete_bloch(np.zeros((64, 64)), SpectralGrid2D(64, 64, 20.0, 20.0))
    with pytest.raises(IncommensurateBox):
        BlochLattice.of(SpectralGrid2D.commensurate(100, 64, 8))


def test_block_operator_matches_grid_operator(small_blocks):
    v = random_field(SMALL, 1)
    a, b = small_blocks.apply_grid(v), small_blocks.apply_blocks(v)
    assert np.abs(a - b).max() < 1e-12 * np.abs(a).max()


def test_regularized_inverse_solves_off_kernel(small_blocks):
    v = random_field(SMALL, 2)
    f = ModeFilterPair(0.125, small_blocks)
    w = f.ph(v)  # kernel lives at nu = 0 inside the filter support
    rhs = small_blocks.apply_grid(w)
    x = small_blocks.solve(rhs, 1e-10)
    # near-neutral eigenvalues are tiny, so compare residuals rather than solutions
    assert np.abs(small_blocks.apply_grid(x) - rhs).max() < 1e-11 * np.abs(rhs).max()


# --- mode filters -----------------------------------------------------------


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31), r=st.sampled_from([0.0625, 0.1, 0.125]))
def test_filter_algebra(small_blocks, seed, r):
    u = random_field(SMALL, seed)
    f, f2 = ModeFilterPair(r, small_blocks), ModeFilterPair(2 * r, small_blocks)
    scale = np.abs(u).max()
    assert np.abs(f.p0(u) + f.ph(u) - u).max() <= 4e-16 * scale
    assert np.abs(f.p0(f2.ph(u))).max() <= 1e-15 * scale
    assert np.abs(f2.ph(f.p0(u))).max() <= 1e-15 * scale
    L = small_blocks.apply_grid
    assert np.abs(f.p0(L(u)) - L(f.p0(u))).max() < 1e-10


def test_spectrum_outside_twice_radius_is_filtered_out(small_blocks):
    X = SMALL.mesh()
    u = np.cos(0.75 * X[1]) * np.cos(X[0])  # |nu| = 0.75 > 2r
    f = ModeFilterPair(0.25, small_blocks)
    lat = small_blocks.lat
    j2 = int(np.argmin(np.abs(lat.k2 - 0.75)))
    assert np.all(f.coefficient(u)[lat.l == 0, j2] == 0.0)
    assert np.abs(f.p0(u)).max() < 1e-15  # FFT round-off only


def test_slow_envelope_is_recovered(profile):
    grid = SpectralGrid2D.commensurate(256, 128, 16, Ly=32 * np.pi)
    blocks = StripeBlocks(profile, grid, 0.0)
    X = grid.mesh()
    envelope = 0.3 * np.cos(X[0] / 16) + 0.2 * np.sin(2 * X[1] / (32))
    u = eval_cosine_series(profile.coeffs, 1, X[0]) * envelope
    parts = apply_mode_filters(u, ModeFilterPair(0.25, blocks))
    assert np.abs(parts.u0 + parts.uh - u).max() < 1e-15
    assert np.abs(parts.envelope - envelope).max() < 1e-3
    assert np.abs(parts.remainder).max() < 1e-3 * np.abs(u).max()


def test_branch_gap_is_checked(small_blocks):
    with pytest.raises(BranchUnavailable):
        ModeFilterPair(0.25, small_blocks, min_gap=1e6)
    # the branch meets its mirror image at nu_1 = 1/2
    with pytest.raises(BranchUnavailable):
        ModeFilterPair(0.4, small_blocks)


# --- Newton -----------------------------------------------------------------


def test_zero_forcing_returns_stripe(profile, desk_blocks):
    sol = newton_solve(GAUSS, 0.0, profile, DESK, np.pi, blocks=desk_blocks)
    assert sol.iterations <= 2
    ref = eval_cosine_series(profile.coeffs, 0, DESK.mesh()[0] + np.pi)
    assert np.abs(sol.u - ref).max() < 1e-10


def test_small_forcing_converges_quadratically(desk_solution):
    sol = desk_solution
    assert sol.newton_residual < 1e-10
    assert sol.iterations <= 6
    assert sol.quadratic_tail
    assert max(sol.convergence_orders()) > 1.8


def test_both_pinning_zeros_give_solutions(profile, desk_solution):
    other = newton_solve(GAUSS, 0.02, profile, DESK, 0.0)
    assert other.newton_residual < 1e-10
    a_here = extract_phase(desk_solution.u, profile, DESK).a0
    a_there = extract_phase(other.u, profile, DESK).a0
    assert abs(np.angle(np.exp(1j * (a_here - np.pi)))) < 0.05
    assert abs(np.angle(np.exp(1j * a_there))) < 0.05


def test_diagonal_preconditioner_reaches_the_same_solution(profile):
    grid = SpectralGrid2D.commensurate(128, 128, 8)
    ref = newton_solve(GAUSS, 0.02, profile, grid, np.pi)
    sol = newton_solve(GAUSS, 0.02, profile, grid, np.pi, precond="diagonal",
                       gmres_restart=100, gmres_maxiter=20, max_iter=20)
    assert sol.newton_residual < 1e-10
    assert np.abs(sol.u - ref.u).max() < 1e-9
    assert sum(sol.gmres_iterations) > sum(ref.gmres_iterations)


def test_divergence_reports_history(profile, desk_blocks):
    with pytest.raises(NewtonDiverged) as info:
        newton_solve(GAUSS, 0.02, profile, DESK, np.pi, max_iter=1, blocks=desk_blocks)
    assert len(info.value.history) == 2


def test_solution_inherits_transverse_parity(desk_solution):
    u = desk_solution.u
    mirrored = np.roll(u[:, ::-1], 1, axis=1)  # x2 -> -x2 on the centered grid
    assert np.abs(u - mirrored).max() < 1e-8


# --- phase extraction and fit ------------------------------------------------


def test_pure_translate_phase(profile):
    u = eval_cosine_series(profile.coeffs, 0, DESK.mesh()[0] + 0.3)
    ex = extract_phase(u, profile, DESK)
    assert ex.a0 == pytest.approx(0.3, abs=1e-6)
    assert np.abs(ex.phase_field).max() < 1e-6


def synthetic_dipole_field(profile, a):
    """Stripe family along a dipole phase that is slowly varying and vanishes at the box edge."""
    G = AnisotropicGreens(1.0, 1.0)
    X = DESK.mesh()
    phase = DipolePhase(a, G, CutoffFunction(8.0))
    outer = CutoffFunction(DESK.Lx / 4)(*X)
    theta = phase.theta(*X) * outer
    grad = np.gradient(theta, DESK.dx, DESK.dy)
    kappa = np.hypot(1 + grad[0], grad[1])
    u = StripeFamily(profile).evaluate(X[0] + 0.3 + theta, kappa)
    return u, theta, G


def test_phase_field_recovers_synthetic_modulation(profile):
    u, theta, _ = synthetic_dipole_field(profile, (0.1, 0.0))
    ex = extract_phase(u, profile, DESK)
    r = DESK.radius()
    ann = (r > 2) & (r < DESK.Lx / 4)
    err = np.linalg.norm(ex.phase_field[ann] - theta[ann]) / np.linalg.norm(theta[ann])
    assert ex.a0 == pytest.approx(0.3, abs=1e-4)
    assert err < 0.02


def test_large_deformation_fails_to_unwrap(profile):
    u = random_field(DESK, 4)
    with pytest.raises(PhaseUnwrapFailure):
        extract_phase(u, profile, DESK)


def test_fit_recovers_exact_basis_member():
    G = AnisotropicGreens(1.0, 1.0)
    X = DESK.mesh()
    sel = DESK.radius() > 0.5
    theta = np.zeros(DESK.shape)
    theta[sel] = 0.1 * G.derivative((X[0][sel], X[1][sel]), (1, 0))
    fit = fit_dipole(theta, G, DESK)
    assert np.allclose(fit.a, (0.1, 0.0), atol=1e-3)
    assert fit.relative_residual < 1e-10


def test_thin_annulus_is_ill_conditioned():
    G = AnisotropicGreens(1.0, 1.0)
    with pytest.raises(IllConditionedFit):
        fit_dipole(np.zeros(DESK.shape), G, DESK, annulus=(5.0, 5.01))


def test_even_forcing_gives_no_transverse_dipole(profile, diffusivities, desk_solution):
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp)
    ex = extract_phase(desk_solution.u, profile, DESK)
    fit = fit_dipole(ex.phase_field, G, DESK)
    assert abs(fit.a[1]) < 1e-8 * max(abs(fit.a[0]), fit.residual_norm)


# --- time relaxation --------------------------------------------------------


def test_stripe_is_stationary_under_relaxation(profile):
    u0 = eval_cosine_series(profile.coeffs, 0, SMALL.mesh()[0])
    out = time_relax(u0, None, 0.0, 20, 0.5, SMALL, profile.mu)
    assert np.abs(out.u - u0).max() < 1e-10


def test_perturbation_relaxes(profile):
    u0 = eval_cosine_series(profile.coeffs, 0, SMALL.mesh()[0])
    noisy = u0 + 1e-2 * random_field(SMALL, 5)
    out = time_relax(noisy, None, 0.0, 200, 0.5, SMALL, profile.mu, record_every=20)
    assert out.residuals[-1] < 0.1 * out.residuals[0]
    assert out.energy_monotone


def test_unstable_step_is_detected(profile):
    u0 = 50 * eval_cosine_series(profile.coeffs, 0, SMALL.mesh()[0])
    with pytest.raises(StepUnstable):
        time_relax(u0, None, 0.0, 50, 5.0, SMALL, profile.mu)


def test_warmstart_saves_newton_steps(profile, desk_blocks):
    cold = predicted_guess(profile, DESK, np.pi)
    warm = time_relax(cold, GAUSS, 0.02, 40, 1.0, DESK, profile.mu).u
    n_cold = newton_solve(GAUSS, 0.02, profile, DESK, np.pi, guess=cold, blocks=desk_blocks)
    n_warm = newton_solve(GAUSS, 0.02, profile, DESK, np.pi, guess=warm, blocks=desk_blocks)
    assert n_warm.iterations < n_cold.iterations
    residual = stationary_residual(n_warm.u, 0.02 * GAUSS.sample(DESK), profile.mu, DESK)
    assert np.abs(residual).max() < 1e-10
