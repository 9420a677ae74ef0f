import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinstripe.bloch import EffectiveDiffusivities
from pinstripe.cutoff import CutoffFunction
from pinstripe.errors import (
    ConfigError,
    IdentityViolation,
    IoFailure,
    KappaNonPositive,
    KappaOutOfTable,
    OriginEvaluation,
)
from pinstripe.farfield import (
    AnisotropicGreens,
    DipolePhase,
    a00,
    asymptotic_decade,
    box_boundary_integral,
    build_ansatz,
    build_phase,
    fd_weights,
    jacobi_closed_form,
    jacobi_diagonal,
    leading_residual,
    read_field,
    residual_decay,
    residual_pointwise,
    residual_R,
    w_parallel_check,
    weighted_norm,
    write_field,
)
from pinstripe.grids import SpectralGrid2D, TensorGrid
from pinstripe.stripe_core import StripeFamily, eval_cosine_series

D_PAR, D_PERP = 4.0, 0.25
coords = st.floats(0.5, 20).flatmap(
    lambda r: st.floats(0, 2 * np.pi).map(lambda t: (r * np.cos(t), r * np.sin(t))))


@pytest.fixture(scope="module")
def family(profile):
    return StripeFamily(profile)


@pytest.fixture(scope="module")
def phase(diffusivities):
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp)
    return DipolePhase((0.72, 0.0), G)


# --- Green's function -------------------------------------------------------


def test_flux_normalization():
    assert AnisotropicGreens(D_PAR, D_PERP).flux() == pytest.approx(1.0, rel=1e-13)
    radial = AnisotropicGreens(D_PAR, D_PERP, normalization="radial")
    assert radial.flux() == pytest.approx(-np.sqrt(D_PAR * D_PERP), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(x=coords)
def test_green_function_is_harmonic_away_from_origin(x):
    G = AnisotropicGreens(D_PAR, D_PERP)
    lap = D_PAR * G.derivative(x, (2, 0)) + D_PERP * G.derivative(x, (0, 2))
    assert abs(lap) < 1e-13 * abs(G.derivative(x, (2, 0)))
    lap_dx = D_PAR * G.derivative(x, (3, 0)) + D_PERP * G.derivative(x, (1, 2))
    assert abs(lap_dx) < 1e-12 * abs(G.derivative(x, (3, 0)))


@settings(max_examples=30, deadline=None)
@given(x=coords, a=st.integers(0, 3), b=st.integers(0, 2))
def test_green_derivatives_match_finite_differences(x, a, b):
    G = AnisotropicGreens(D_PAR, D_PERP)
    h = 1e-4 * np.hypot(*x)
    fd = (G.derivative((x[0] + h, x[1]), (a, b)) - G.derivative((x[0] - h, x[1]), (a, b))) / (2 * h)
    exact = G.derivative(x, (a + 1, b))
    assert fd == pytest.approx(exact, rel=1e-6, abs=1e-8 * abs(G.derivative(x, (a, b))) / h)


def test_green_function_in_three_dimensions():
    G = AnisotropicGreens(D_PAR, D_PERP, n=3)
    x = (1.3, -0.4, 0.9)
    lap = sum(d * G.derivative(x, tuple(2 * int(i == j) for i in range(3)))
              for j, d in enumerate((D_PAR, D_PERP, D_PERP)))
    assert abs(lap) < 1e-13
    h = 1e-5
    fd = (G.derivative((x[0], x[1] + h, x[2]), (1, 0, 1))
          - G.derivative((x[0], x[1] - h, x[2]), (1, 0, 1))) / (2 * h)
    assert fd == pytest.approx(G.derivative(x, (1, 1, 1)), rel=1e-7)
    # radial profile: dG/dr_eff = -1 / (4 pi r_eff^2)
    Gr = AnisotropicGreens(D_PAR, D_PERP, n=3, normalization="radial")
    assert Gr(2 * np.sqrt(D_PAR), 0.0, 0.0) == pytest.approx(1 / (8 * np.pi), rel=1e-14)


def test_origin_and_bad_arguments_are_rejected():
    G = AnisotropicGreens(D_PAR, D_PERP)
    with pytest.raises(OriginEvaluation):
        G(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ConfigError):
        AnisotropicGreens(-1.0, 1.0)
    with pytest.raises(ConfigError):
        AnisotropicGreens(1.0, 1.0, normalization="other")


# --- phase and ansatz -------------------------------------------------------


@pytest.mark.parametrize("point", [(1.5, 0.2), (0.4, 1.6), (7.0, -0.3), (-3.0, 2.5)])
def test_phase_derivatives_match_finite_differences(point):
    ph = DipolePhase((0.3, -0.2), AnisotropicGreens(D_PAR, D_PERP), CutoffFunction(1.0))
    x1, x2 = point
    h = 1e-5
    g = ph.gradient(x1, x2)
    H = ph.hessian(x1, x2)
    assert g[0] == pytest.approx((ph.theta(x1 + h, x2) - ph.theta(x1 - h, x2)) / (2 * h), rel=1e-6)
    assert g[1] == pytest.approx((ph.theta(x1, x2 + h) - ph.theta(x1, x2 - h)) / (2 * h), rel=1e-6)
    for i, e in enumerate(((h, 0), (0, h))):
        gp = ph.gradient(x1 + e[0], x2 + e[1])
        gm = ph.gradient(x1 - e[0], x2 - e[1])
        for j in range(2):
            assert H[j, i] == pytest.approx((gp[j] - gm[j]) / (2 * h), rel=1e-5, abs=1e-9)


def test_phase_vanishes_inside_cutoff():
    ph = DipolePhase((1.0, 1.0), AnisotropicGreens(D_PAR, D_PERP))
    x = np.array([0.0, 0.3, -0.5])
    y = np.array([0.0, 0.2, 0.1])
    assert np.all(ph.theta(x, y) == 0)
    assert np.all(ph.hessian(x, y) == 0)


def test_build_phase_on_grid_and_folding_guard(diffusivities):
    grid = TensorGrid((64, 64), (8.0, 8.0))
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp)
    field = build_phase((0.01, 0.0), G, grid, CutoffFunction(1.0))
    X = grid.mesh()
    assert np.allclose(field.psi, X[0] + field.theta)
    assert np.all(field.kappa > 0)
    with pytest.raises(KappaNonPositive):
        build_phase((50.0, 0.0), G, grid)
    with pytest.warns(UserWarning):
        build_phase((0.01, 0.0), G, TensorGrid((16, 16), (8.0, 8.0)))


@pytest.mark.filterwarnings("ignore:grid spacing")
def test_zero_dipole_reproduces_the_stripe(profile, family, diffusivities):
    grid = SpectralGrid2D.commensurate(256, 32, periods=8, Ly=10.0)
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp)
    field = build_phase((0.0, 0.0), G, grid)
    u = build_ansatz(family, field)
    assert np.allclose(u, eval_cosine_series(profile.coeffs, 0, grid.mesh()[0]), atol=1e-15)
    # spectral floor: round-off amplified by the largest symbol (1 - k_max^2)^2
    k_max = np.pi / grid.spacing[0]
    assert np.max(np.abs(residual_R(family, field, grid))) < 1e-15 * k_max**4
    x1 = np.array([3.0, 100.0])
    assert np.all(residual_pointwise(family, field.model, x1, np.zeros(2)) == 0)


def test_kappa_outside_table_is_rejected(family, diffusivities):
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp)
    ph = DipolePhase((0.72, 0.0), G)
    with pytest.raises(KappaOutOfTable):
        build_ansatz(family, ph, (np.array([3.0]), np.array([0.0])))


def test_exact_rational_stencils():
    w = fd_weights(4, 10)
    s = np.arange(-10, 11)
    for p in range(20):
        expected = 24.0 if p == 4 else 0.0
        assert np.sum(w * s.astype(float) ** p) == pytest.approx(expected, abs=1e-6 * 10**p)


def test_pointwise_residual_approaches_leading_term(profile, family, phase):
    # ~ 80 transverse wedge widths out the leading term carries all but ~1 %
    s = np.sqrt(phase.G.d_perp / phase.G.d_par)
    x1 = np.array([12800.9])
    x2 = 0.3 * s * x1
    L = leading_residual(profile, phase, x1, x2)
    R = residual_pointwise(family, phase, x1, x2, h1=0.2, h2=0.05 * s * x1[0], half_width=10)
    assert R[0] == pytest.approx(L[0], rel=0.02)


def test_pointwise_residual_is_stencil_independent(family, phase):
    s = np.sqrt(phase.G.d_perp / phase.G.d_par)
    x1 = np.array([3200.3, 51200.2])
    x2 = 0.3 * s * x1
    a = residual_pointwise(family, phase, x1, x2, h1=0.2, h2=0.05 * s * x1, half_width=10)
    b = residual_pointwise(family, phase, x1, x2, h1=0.25, h2=0.04 * s * x1, half_width=12)
    assert np.allclose(a, b, rtol=1e-4)


def test_decay_fit_reports_consistent_slopes(family, phase, diffusivities):
    radii = asymptotic_decade(diffusivities, n=4)
    fit = residual_decay(family, phase, radii, n_angles=16, n_radial=4)
    assert fit.radii[-1] == pytest.approx(10 * fit.radii[0])
    assert np.all(fit.norms_subtracted < fit.norms)
    assert fit.slope_subtracted < fit.slope < 0


# --- identities -------------------------------------------------------------


def test_w_identities_hold(profile, diffusivities):
    chk = w_parallel_check(profile, diffusivities)
    assert chk.w_par_relative_variation < 1e-12
    assert chk.w_par_mean_error < 1e-12
    assert chk.w_perp_mean_error < 1e-9


def test_w_check_flags_wrong_diffusivity(profile, diffusivities):
    wrong = EffectiveDiffusivities(diffusivities.d_par * 1.01, diffusivities.d_perp, "curvature_fit")
    with pytest.raises(IdentityViolation):
        w_parallel_check(profile, wrong)


def test_a00_matches_grid_quadrature(profile):
    R = 6.0
    grid = TensorGrid((512, 512), (4 * R, 4 * R))
    X = grid.mesh()
    chi = CutoffFunction(R)
    direct = grid.integrate(chi(*X) * eval_cosine_series(profile.coeffs, 1, X[0]) ** 2)
    assert a00(profile, R) == pytest.approx(direct, rel=1e-9)


def test_a00_grows_like_area(profile):
    big = a00(profile, 200.0)
    avg = np.mean(eval_cosine_series(profile.coeffs, 1, np.linspace(0, 2 * np.pi, 64,
                                                                    endpoint=False)) ** 2)
    area = 2 * np.pi * 200.0**2 * CutoffFunction(1.0).profile(np.linspace(0, 2, 4001)).dot(
        np.linspace(0, 2, 4001)) * (2 / 4000)
    assert big == pytest.approx(avg * area, rel=1e-2)


def test_box_integrals_reach_closed_form(profile, diffusivities):
    G = AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp, normalization="radial")
    closed = jacobi_closed_form(profile, diffusivities)
    a11 = box_boundary_integral(profile, G, 1, 1, 2 * np.pi * 40)
    assert a11 == pytest.approx(closed, rel=1e-5)
    assert box_boundary_integral(profile, G, 1, 2, 2 * np.pi * 40) == 0.0


def test_jacobi_extrapolation(profile, diffusivities):
    radii = 2 * np.pi * np.array([40, 80, 160, 320])
    out = jacobi_diagonal(profile, diffusivities, radii)
    assert out.relative_error(1) < 1e-6
    assert out.relative_error(2) < 1e-4
    assert abs(out.extrapolated[(1, 2)]) < 1e-12
    flux = jacobi_diagonal(profile, diffusivities, radii,
                           G=AnisotropicGreens(diffusivities.d_par, diffusivities.d_perp))
    assert flux.relative_error(1) < 1e-6


# --- fields -----------------------------------------------------------------


def test_field_roundtrip(tmp_path):
    grid = TensorGrid((32, 16), (10.0, 4.0))
    f = np.random.default_rng(0).standard_normal(grid.shape)
    write_field(tmp_path / "u.spin", f, grid, {"stage": "test"})
    assert (tmp_path / "u.spin").stat().st_size == 64 + 8 * f.size
    g, grid2, prov = read_field(tmp_path / "u.spin")
    assert np.array_equal(f, g)
    assert grid2.shape == grid.shape and np.allclose(grid2.lengths, grid.lengths)
    assert prov == {"stage": "test"}


def test_bad_field_file(tmp_path):
    (tmp_path / "bad.spin").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(IoFailure):
        read_field(tmp_path / "bad.spin")
    with pytest.raises(IoFailure):
        read_field(tmp_path / "missing.spin")


def test_weighted_norm_reexport():
    grid = TensorGrid((64, 64), (40.0, 40.0))
    X = grid.mesh()
    assert weighted_norm(np.exp(-(X[0] ** 2 + X[1] ** 2)), grid, 2.5).value > 0
