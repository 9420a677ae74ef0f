import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from pinstripe.errors import ConfigError, DegeneratePinning, IdenticallyZero, TailTooHeavy
from pinstripe.farfield import fd_weights
from pinstripe.grids import TensorGrid
from pinstripe.pinning import (
    Inhomogeneity,
    PinningReport,
    alpha_leading,
    dipole_coefficients,
    dipole_moments,
    find_pinning,
    gamma_window,
    melnikov,
    melnikov_direct,
    pseudo_harmonic,
    select_zero,
    translation_mode_average,
)
from pinstripe.stripe_core import eval_cosine_series

GRID = TensorGrid((512, 512), (64 * np.pi, 64 * np.pi))
PERIOD = 2 * np.pi


def offsets(n=64):
    return PERIOD * np.arange(n) / n


def builtin_forcings():
    return {
        "gaussian": Inhomogeneity.gaussian(1.0, (0.7, 0.3), (2.0, 1.5)),
        "gaussian_sum": Inhomogeneity.gaussian_sum([
            {"amplitude": 1.0, "center": (0.0, 0.0), "widths": (2.0, 2.0)},
            {"amplitude": -0.5, "center": (3.0, 1.0), "widths": (1.0, 3.0)},
        ]),
        "bump": Inhomogeneity.bump(1.0, (0.4, 0.0), 6.0),
        "custom": Inhomogeneity.custom(
            lambda x1, x2: (1 + 0.3 * x1) * np.exp(-(x1**2 + x2**2) / 5)),
    }


@pytest.mark.parametrize("name", list(builtin_forcings()))
def test_melnikov_has_zero_mean_and_two_transversal_zeros(profile, name):
    g = builtin_forcings()[name]
    curve = melnikov(g, profile, offsets(), GRID)
    assert abs(curve.values.mean()) < 1e-10 * np.abs(curve.values).max()
    zeros = find_pinning(curve)
    assert len(zeros) >= 2
    assert any(z.slope > 0 for z in zeros) and any(z.slope < 0 for z in zeros)


@pytest.mark.parametrize("name", list(builtin_forcings()))
def test_zero_locations_stable_under_offset_doubling(profile, name):
    g = builtin_forcings()[name]
    z64 = find_pinning(melnikov(g, profile, offsets(64), GRID))
    z128 = find_pinning(melnikov(g, profile, offsets(128), GRID))
    assert len(z64) == len(z128)
    for a, b in zip(z64, z128):
        assert abs(a.x - b.x) < 1e-10


def test_melnikov_is_periodic(profile):
    curve = melnikov(builtin_forcings()["gaussian"], profile, offsets(), GRID)
    x = np.linspace(-3, 3, 17)
    assert np.allclose(curve(x), curve(x + PERIOD), atol=1e-14 * curve.scale)


def test_even_forcing_vanishes_at_zero_offset(profile):
    g = Inhomogeneity.gaussian(1.0, (0.0, 0.0), (2.0, 2.0))
    curve = melnikov(g, profile, offsets(), GRID)
    assert abs(curve(0.0)) < 1e-14 * curve.scale
    xs = sorted(z.x for z in find_pinning(curve))
    assert xs[0] == pytest.approx(0.0, abs=1e-12)
    assert xs[1] == pytest.approx(np.pi, abs=1e-12)


def test_shift_conventions_agree(profile):
    g = builtin_forcings()["gaussian"]
    for x0 in (0.3, 1.7, -2.2):
        a = melnikov_direct(g, profile, x0, GRID, shift_forcing=False)
        b = melnikov_direct(g, profile, x0, GRID, shift_forcing=True)
        c = float(melnikov(g, profile, [x0], GRID).values[0])
        assert a == pytest.approx(b, abs=1e-12)
        assert a == pytest.approx(c, abs=1e-12)


def test_melnikov_matches_adaptive_quadrature(profile):
    # gaussian marginal along x2 is exact; adaptive quadrature along x1
    amp, w1, w2, c1 = 1.3, 2.0, 1.5, 0.7
    g = Inhomogeneity.gaussian(amp, (c1, 0.3), (w1, w2))
    curve = melnikov(g, profile, offsets(), GRID)
    for x0 in (0.0, 0.9, 2.5):
        integrand = lambda x1: (eval_cosine_series(profile.coeffs, 1, x1 + x0)  # noqa: E731
                                * np.exp(-((x1 - c1) / w1) ** 2))
        ref = amp * w2 * np.sqrt(np.pi) * quad(integrand, -40, 40, limit=400,
                                               epsabs=1e-13, epsrel=1e-11)[0]
        assert curve(x0) == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_find_pinning_from_raw_samples():
    x = offsets(64)
    zeros = find_pinning(offsets=x, values=np.sin(x - 0.4))
    assert [round(z.x, 12) for z in zeros] == [0.4, round(0.4 + np.pi, 12)]
    assert select_zero(zeros).x == pytest.approx(0.4)
    assert select_zero(zeros, "negative_slope").x == pytest.approx(0.4 + np.pi)


def test_find_pinning_rejects_zero_and_degenerate_curves():
    x = offsets(64)
    with pytest.raises(IdenticallyZero):
        find_pinning(offsets=x, values=np.zeros(64), floor=1e-12)
    with pytest.raises(DegeneratePinning):
        find_pinning(offsets=x, values=1 - np.cos(x))
    with pytest.raises(ConfigError):
        find_pinning(offsets=x[:32], values=np.sin(x[:32]))


def test_heavy_tail_is_rejected(profile):
    g = Inhomogeneity.gaussian(1.0, (0.0, 0.0), (40.0, 40.0))
    with pytest.raises(TailTooHeavy):
        melnikov(g, profile, offsets(), GRID)


def test_gamma_window_is_enforced():
    assert gamma_window(2) == (2.0, 3.0)
    with pytest.raises(ConfigError):
        Inhomogeneity.gaussian(gamma=3.5).localization(GRID)
    assert Inhomogeneity.gaussian().localization(GRID).value > 0


def test_inhomogeneity_roundtrip():
    for name, g in builtin_forcings().items():
        if name == "custom":
            with pytest.raises(ConfigError):
                g.to_dict()
            continue
        h = Inhomogeneity.from_dict(json.loads(json.dumps(g.to_dict())))
        X = GRID.mesh()
        assert np.array_equal(g(*X), h(*X))


# --- dipole ---------------------------------------------------------------


def test_dipole_transverse_component_vanishes_for_even_forcing(profile, diffusivities):
    g = Inhomogeneity.gaussian(1.0, (0.0, 0.0), (2.0, 2.0))
    a = dipole_coefficients(g, profile, diffusivities, 0.0, GRID)
    assert abs(a[1]) < 1e-12 * abs(a[0])


@settings(max_examples=15, deadline=None)
@given(factor=st.floats(-5, 5).filter(lambda f: abs(f) > 1e-3))
def test_dipole_is_linear_in_forcing(profile, diffusivities, factor):
    g = builtin_forcings()["gaussian"]
    a = dipole_coefficients(g, profile, diffusivities, 0.5, GRID)
    b = dipole_coefficients(g.scaled(factor), profile, diffusivities, 0.5, GRID)
    assert np.allclose(b, factor * a, rtol=1e-12, atol=1e-12 * np.abs(a).max())


def test_radial_and_flux_conventions_differ_by_green_normalization(profile, diffusivities):
    g = builtin_forcings()["gaussian"]
    flux = dipole_coefficients(g, profile, diffusivities, 0.0, GRID, "flux")
    radial = dipole_coefficients(g, profile, diffusivities, 0.0, GRID, "radial")
    scale = np.sqrt(diffusivities.d_par * diffusivities.d_perp)
    assert np.allclose(radial, -flux / scale, rtol=1e-13)
    with pytest.raises(ConfigError):
        dipole_coefficients(g, profile, diffusivities, 0.0, GRID, "other")


@settings(max_examples=10, deadline=None)
@given(s=st.floats(-3, 3), a0=st.floats(0, 2 * np.pi))
def test_transverse_shift_adds_pinning_value_to_transverse_moment(profile, s, a0):
    g = builtin_forcings()["gaussian"]
    m0 = dipole_moments(g, profile, a0, GRID)
    m1 = dipole_moments(g.translated((0.0, s)), profile, a0, GRID)
    M = melnikov(g, profile, [a0], GRID).values[0]
    assert m1[1] - m0[1] == pytest.approx(s * M, abs=1e-10)
    assert m1[0] == pytest.approx(m0[0], abs=1e-10)


def test_pseudo_harmonics_are_in_the_kernel(profile):
    # -(Delta + 1)^2 H + (mu - 3 u^2) H at scattered points, 12th-order stencils
    mu, h, K = profile.mu, 0.05, 7
    w2, w4 = fd_weights(2, K), fd_weights(4, K)
    steps = np.arange(-K, K + 1)
    pts = np.array([[0.3, -1.2], [5.1, 2.0], [-7.7, 0.4]])
    for j in (1, 2):
        for p in pts:
            def H(dx1, dx2):
                return pseudo_harmonic(profile, j, (p[0] + dx1, p[1] + dx2))
            d1 = [H(s * h, 0) for s in steps]
            d2 = [H(0, s * h) for s in steps]
            mixed = sum(w2[a] * w2[b] * H(sa * h, sb * h)
                        for a, sa in enumerate(steps) for b, sb in enumerate(steps))
            lap2 = (w4 @ d1 + w4 @ d2) / h**4 + 2 * mixed / h**4
            lap = (w2 @ d1 + w2 @ d2) / h**2
            u = eval_cosine_series(profile.coeffs, 0, p[0])
            val = -(lap2 + 2 * lap + H(0, 0)) + (mu - 3 * u**2) * H(0, 0)
            assert abs(val) < 1e-8


def test_translation_mode_average(profile):
    x = 2 * np.pi * np.arange(512) / 512
    up = eval_cosine_series(profile.coeffs, 1, x)
    assert translation_mode_average(profile) == pytest.approx(np.mean(up**2), rel=1e-13)


def test_alpha_vanishes_at_pinning_zero_and_follows_slope(profile):
    curve = melnikov(builtin_forcings()["gaussian"], profile, offsets(), GRID)
    z = select_zero(find_pinning(curve))
    assert abs(alpha_leading(curve, z.x, 2.0)) < 1e-12 * curve.scale
    assert np.sign(alpha_leading(curve, z.x + 1e-3, 2.0)) == np.sign(z.slope)


def test_report_outputs(profile, diffusivities, tmp_path):
    g = builtin_forcings()["gaussian"]
    curve = melnikov(g, profile, offsets(), GRID)
    zeros = find_pinning(curve)
    a = dipole_coefficients(g, profile, diffusivities, zeros[0].x, GRID)
    rep = PinningReport(curve, zeros, zeros[0].x, a)
    rep.to_json(tmp_path / "pin.json")
    loaded = json.loads((tmp_path / "pin.json").read_text())
    assert loaded["a0"] == zeros[0].x
    assert len(loaded["zeros"]) == len(zeros)
    curve.to_csv(tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "offset,M" and len(rows) == 65
    assert float(rows[5].split(",")[1]) == curve.values[4]
