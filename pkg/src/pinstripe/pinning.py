"""Localized inhomogeneities, the pinning function and leading dipole moments.

The pinning function of a forcing ``g`` is the projection of ``g`` onto the
translation mode of the stripe shifted by ``x0``:

    M(x0) = int u_*'(x_1 + x0) g(x) dx = int u_*'(x_1) g(x_1 - x0, x_perp) dx.

Both forms are the same integral after the substitution ``x_1 -> x_1 - x0``.
Because ``u_*'`` is a trigonometric polynomial, ``M`` only needs the cosine
and sine moments of the ``x_1``-marginal of ``g``; it is then itself an exact
trigonometric polynomial in ``x0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .bloch import EffectiveDiffusivities
from .cutoff import CutoffFunction
from .errors import ConfigError, DegeneratePinning, IdenticallyZero, TailTooHeavy
from .grids import TensorGrid
from .stripe_core import StripeProfile, eval_cosine_series
from .weights import WeightedNorm, weighted_norm


def gamma_window(n: int) -> tuple:
    """Admissible open interval for the localization exponent in dimension ``n``."""
    return (1 + n / 2, 2 + n / 2)


# ---------------------------------------------------------------------------
# inhomogeneities


def _gaussian(coords, amplitude, center, widths):
    arg = sum(((c - c0) / w) ** 2 for c, c0, w in zip(coords, center, widths))
    return amplitude * np.exp(-arg)


@dataclass(frozen=True)
class Inhomogeneity:
    """Localized forcing ``g(x)`` with a localization exponent ``gamma``.

    Built-in kinds: ``gaussian`` (anisotropic, ``amplitude exp(-sum ((x-c)/w)^2)``),
    ``gaussian_sum`` (list of such terms) and ``bump`` (``amplitude chi(|x-c|/r)``
    with the cutoff profile).  ``custom`` wraps an arbitrary closure.
    """

    kind: str
    params: dict
    gamma: float = 2.5
    dim: int = 2
    closure: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("gaussian", "gaussian_sum", "bump", "custom"):
            raise ConfigError(f"unknown inhomogeneity kind {self.kind!r}")
        if self.kind == "custom" and self.closure is None:
            raise ConfigError("custom inhomogeneity needs a closure")

    # constructors ---------------------------------------------------------
    @classmethod
    def gaussian(cls, amplitude=1.0, center=(0.0, 0.0), widths=(2.0, 2.0), gamma=2.5):
        center, widths = tuple(map(float, center)), tuple(map(float, widths))
        if len(center) != len(widths):
            raise ConfigError("center and widths must have equal length")
        return cls("gaussian", {"amplitude": float(amplitude), "center": center,
                                "widths": widths}, gamma, len(center))

    @classmethod
    def gaussian_sum(cls, terms: Sequence[dict], gamma=2.5):
        terms = tuple(
            {"amplitude": float(t["amplitude"]), "center": tuple(map(float, t["center"])),
             "widths": tuple(map(float, t["widths"]))}
            for t in terms
        )
        return cls("gaussian_sum", {"terms": terms}, gamma, len(terms[0]["center"]))

    @classmethod
    def bump(cls, amplitude=1.0, center=(0.0, 0.0), radius=2.0, recipe="quintic", gamma=2.5):
        return cls("bump", {"amplitude": float(amplitude), "center": tuple(map(float, center)),
                            "radius": float(radius), "recipe": recipe}, gamma, len(center))

    @classmethod
    def custom(cls, closure: Callable, dim: int = 2, gamma: float = 2.5, name: str = "custom"):
        return cls("custom", {"name": name}, gamma, dim, closure)

    # evaluation -----------------------------------------------------------
    def __call__(self, *coords):
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates")
        coords = [np.asarray(c, dtype=float) for c in coords]
        p = self.params
        if self.kind == "gaussian":
            return _gaussian(coords, p["amplitude"], p["center"], p["widths"])
        if self.kind == "gaussian_sum":
            return sum(_gaussian(coords, t["amplitude"], t["center"], t["widths"])
                       for t in p["terms"])
        if self.kind == "bump":
            chi = CutoffFunction(p["radius"] / 2, p["recipe"])
            return p["amplitude"] * chi(*[c - c0 for c, c0 in zip(coords, p["center"])])
        return self.closure(*coords)

    def sample(self, grid: TensorGrid, shift=None) -> np.ndarray:
        """Samples of ``g(x - shift)`` on the grid."""
        X = grid.mesh()
        if shift is not None:
            X = [x - s for x, s in zip(X, np.broadcast_to(shift, (self.dim,)))]
        return self(*X)

    def translated(self, shift) -> "Inhomogeneity":
        """``x -> g(x - shift)``."""
        s = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        mv = lambda c: tuple(float(a + b) for a, b in zip(c, s))  # noqa: E731
        p = self.params
        if self.kind in ("gaussian", "bump"):
            return Inhomogeneity(self.kind, {**p, "center": mv(p["center"])}, self.gamma,
                                 self.dim)
        if self.kind == "gaussian_sum":
            terms = tuple({**t, "center": mv(t["center"])} for t in p["terms"])
            return Inhomogeneity(self.kind, {"terms": terms}, self.gamma, self.dim)
        f = self.closure
        return Inhomogeneity.custom(lambda *x: f(*[a - b for a, b in zip(x, s)]),
                                    self.dim, self.gamma, p.get("name", "custom"))

    def scaled(self, factor: float) -> "Inhomogeneity":
        p = self.params
        if self.kind in ("gaussian", "bump"):
            return Inhomogeneity(self.kind, {**p, "amplitude": p["amplitude"] * factor},
                                 self.gamma, self.dim)
        if self.kind == "gaussian_sum":
            terms = tuple({**t, "amplitude": t["amplitude"] * factor} for t in p["terms"])
            return Inhomogeneity(self.kind, {"terms": terms}, self.gamma, self.dim)
        f = self.closure
        return Inhomogeneity.custom(lambda *x: factor * f(*x), self.dim, self.gamma,
                                    p.get("name", "custom"))

    def localization(self, grid: TensorGrid, tol: float = 1e-6) -> WeightedNorm:
        """``||g||_{L^2_gamma}`` on the grid; raises if gamma or the tail is out of range."""
        lo, hi = gamma_window(self.dim)
        if not lo < self.gamma < hi:
            raise ConfigError(f"gamma={self.gamma} outside ({lo}, {hi}) for n={self.dim}")
        wn = weighted_norm(self.sample(grid), grid, self.gamma)
        if not wn.converged(tol):
            raise TailTooHeavy(
                f"L2_gamma tail fraction {wn.tail_fraction:.2e} beyond |x|>{wn.tail_radius:.3g}"
            )
        return wn

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ConfigError("custom inhomogeneities are not serializable")
        return {"kind": self.kind, "params": json.loads(json.dumps(self.params)),
                "gamma": self.gamma, "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "Inhomogeneity":
        p = d["params"]
        if d["kind"] == "gaussian":
            return cls.gaussian(p["amplitude"], p["center"], p["widths"], d["gamma"])
        if d["kind"] == "gaussian_sum":
            return cls.gaussian_sum(p["terms"], d["gamma"])
        if d["kind"] == "bump":
            return cls.bump(p["amplitude"], p["center"], p["radius"], p["recipe"], d["gamma"])
        raise ConfigError(f"cannot deserialize kind {d['kind']!r}")


def tail_fraction(samples, grid: TensorGrid, power: float = 0.0, band: float = 0.1) -> float:
    """Share of ``int |f| <x>^power`` from the outer ``band`` of every axis."""
    X = grid.mesh()
    w = np.abs(samples) * (1 + sum(x**2 for x in X)) ** (power / 2)
    edge = np.zeros(grid.shape, dtype=bool)
    for x, L in zip(X, grid.lengths):
        edge |= np.abs(x) > (0.5 - band) * L
    total = w.sum()
    return float(w[edge].sum() / total) if total > 0 else 0.0


def _check_tail(samples, grid, power, tol):
    frac = tail_fraction(samples, grid, power)
    if frac > tol:
        raise TailTooHeavy(f"edge band carries a fraction {frac:.2e} of the weighted mass")


# ---------------------------------------------------------------------------
# pinning function


def _derivative_coeffs(profile: StripeProfile) -> np.ndarray:
    """``b_m`` with ``U'(x) = sum_m b_m sin(m k x)``, ``U(x) = u_*(k x)``."""
    m = np.arange(profile.n_modes)
    return -m * profile.k * profile.coeffs


@dataclass(frozen=True)
class MelnikovCurve:
    """Exact trigonometric polynomial ``M(x0)`` plus its samples."""

    offsets: np.ndarray
    values: np.ndarray
    period: float
    k: float
    weights_cos: np.ndarray
    weights_sin: np.ndarray
    scale: float
    """``max|u_*'| int |g|``, an upper bound for ``|M|``."""

    def __call__(self, x0, derivative: int = 0):
        x0 = np.asarray(x0, dtype=float)
        m = np.arange(self.weights_cos.size)
        ph = np.multiply.outer(x0, m * self.k) + derivative * np.pi / 2
        w = (m * self.k) ** derivative
        return np.sin(ph) @ (w * self.weights_cos) + np.cos(ph) @ (w * self.weights_sin)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("offset,M\n")
            for x, v in zip(self.offsets, self.values):
                fh.write(f"{x:.17g},{v:.17g}\n")


def melnikov(
    g: Inhomogeneity,
    profile: StripeProfile,
    offsets,
    grid: TensorGrid,
    tol: float = 1e-10,
) -> MelnikovCurve:
    """``M(x0) = int u_*'(x_1 + x0) g(x) dx`` at the requested offsets."""
    samples = g.sample(grid)
    _check_tail(samples, grid, 0.0, tol)
    h1 = grid.spacing[0]
    marg = samples.reshape(grid.shape[0], -1).sum(axis=1) * grid.cell_volume / h1
    x1 = grid.axes[0]
    b = _derivative_coeffs(profile)
    m = np.arange(b.size)
    arg = np.outer(m * profile.k, x1)
    C = np.cos(arg) @ marg * h1
    S = np.sin(arg) @ marg * h1
    # sin(mk(x1+x0)) = sin(mk x0) cos(mk x1) + cos(mk x0) sin(mk x1)
    wc, ws = b * C, b * S
    offsets = np.asarray(offsets, dtype=float)
    scale = float(np.abs(b).sum() * np.abs(samples).sum() * grid.cell_volume)
    curve = MelnikovCurve(offsets, np.zeros(0), 2 * np.pi / profile.k, profile.k, wc, ws, scale)
    return MelnikovCurve(offsets, curve(offsets), curve.period, profile.k, wc, ws, scale)


def melnikov_direct(g: Inhomogeneity, profile: StripeProfile, x0: float,
                    grid: TensorGrid, shift_forcing: bool = False) -> float:
    """Brute-force quadrature of ``M(x0)`` with either shift convention."""
    X = grid.mesh()
    k = profile.k
    if shift_forcing:
        integrand = k * eval_cosine_series(profile.coeffs, 1, k * X[0]) * g.sample(
            grid, shift=[x0] + [0.0] * (g.dim - 1))
    else:
        integrand = k * eval_cosine_series(profile.coeffs, 1, k * (X[0] + x0)) * g.sample(grid)
    return grid.integrate(integrand)


@dataclass(frozen=True)
class PinningZero:
    x: float
    slope: float
    nondegenerate: bool

    def to_dict(self) -> dict:
        return {"x": self.x, "slope": self.slope, "nondegenerate": self.nondegenerate}


def _trig_interpolant(values, period):
    n = values.size
    F = np.fft.rfft(values) / n
    m = np.arange(F.size)
    wts = np.full(F.size, 2.0)
    wts[0] = 1.0
    if n % 2 == 0:
        wts[-1] = 1.0

    def f(x, derivative=0):
        om = 2 * np.pi * m / period
        ph = np.multiply.outer(np.asarray(x, dtype=float), om)
        return np.real(np.exp(1j * ph) @ (wts * F * (1j * om) ** derivative))

    return f


def find_pinning(
    curve: MelnikovCurve | None = None,
    *,
    offsets=None,
    values=None,
    period: float = 2 * np.pi,
    floor: float | None = None,
    degeneracy: float = 1e-6,
    rel_tol: float = 1e-12,
) -> list:
    """Transversal zeros of a periodic pinning function on one period.

    Works from uniform samples over one period (``offsets``/``values``) or a
    :class:`MelnikovCurve`; in both cases the samples are interpolated
    trigonometrically, sign changes are bracketed and refined with Brent's
    method, and ``M'`` comes from spectral differentiation.
    """
    if curve is not None:
        offsets, values, period = curve.offsets, curve.values, curve.period
        if floor is None:
            floor = 1e-13 * curve.scale
    offsets = np.asarray(offsets, dtype=float)
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 64:
        raise ConfigError("need at least 64 offsets per period")
    step = period / n
    if not np.allclose(np.diff(offsets), step, rtol=1e-9, atol=1e-12 * period):
        raise ConfigError("offsets must be uniform over exactly one period")
    floor = 1e-300 if floor is None else floor
    vmax = np.max(np.abs(values))
    if vmax <= floor:
        raise IdenticallyZero(f"max|M| = {vmax:.3e} below floor {floor:.3e}")
    x0 = offsets[0]
    f = _trig_interpolant(values, period)
    fine = x0 + period * np.arange(8 * n) / (8 * n)
    dmax = np.max(np.abs(f(fine - x0, 1)))
    fv = f(offsets - x0)
    tiny = 1e-14 * vmax
    roots = []
    for i in range(n):
        a, b = offsets[i], offsets[i] + step
        fa, fb = fv[i], fv[(i + 1) % n]
        if abs(fa) <= tiny:
            roots.append(a)
        elif abs(fb) > tiny and fa * fb < 0:
            roots.append(brentq(lambda x: f(x - x0), a, b, xtol=1e-15 * period, rtol=1e-15,
                                maxiter=200))
    zeros = []
    for r in roots:
        r = float(np.mod(r, period))
        if any(min(abs(r - z.x), period - abs(r - z.x)) < 1e-9 for z in zeros):
            continue
        val = f(r - x0)
        if abs(val) > max(rel_tol * vmax, 1e-15 * vmax):
            raise DegeneratePinning(f"could not refine zero near {r:.6f} (|M|={abs(val):.2e})")
        slope = float(f(r - x0, 1))
        zeros.append(PinningZero(r, slope, abs(slope) > degeneracy * dmax))
    zeros.sort(key=lambda z: z.x)
    if not any(z.nondegenerate for z in zeros):
        raise DegeneratePinning("no transversal zero of the pinning function")
    return zeros


def select_zero(zeros: Sequence[PinningZero], rule: str = "positive_slope") -> PinningZero:
    good = [z for z in zeros if z.nondegenerate]
    if rule == "positive_slope":
        pick = [z for z in good if z.slope > 0]
    elif rule == "negative_slope":
        pick = [z for z in good if z.slope < 0]
    else:
        raise ConfigError(f"unknown selection rule {rule!r}")
    if not pick:
        raise DegeneratePinning(f"no nondegenerate zero matches rule {rule!r}")
    return pick[0]


# ---------------------------------------------------------------------------
# dipole moments


def translation_mode_average(profile: StripeProfile) -> float:
    """Period average of ``(d u_*/dx)^2``."""
    b = _derivative_coeffs(profile)
    return float(np.sum(b**2) / 2)


def pseudo_harmonic(profile: StripeProfile, j: int, coords) -> np.ndarray:
    """``H_{1,1} = x_1 U' + k u_{*,k}(k x_1)`` and ``H_{1,l} = x_l U'`` (``U = u_*(k x_1)``)."""
    k = profile.k
    x1 = np.asarray(coords[0], dtype=float)
    Up = k * eval_cosine_series(profile.coeffs, 1, k * x1)
    if j == 1:
        return x1 * Up + k * eval_cosine_series(profile.coeffs_k, 0, k * x1)
    return np.asarray(coords[j - 1], dtype=float) * Up


def dipole_moments(g: Inhomogeneity, profile: StripeProfile, a0: float, grid: TensorGrid,
                   tol: float = 1e-10) -> np.ndarray:
    """``int H_{1,j}(x) g(x_1 - a0, x_perp) dx`` for ``j = 1..n``."""
    shift = [a0] + [0.0] * (g.dim - 1)
    samples = g.sample(grid, shift=shift)
    _check_tail(samples, grid, 1.0, tol)
    X = grid.mesh()
    return np.array([grid.integrate(pseudo_harmonic(profile, j, X) * samples)
                     for j in range(1, g.dim + 1)])


def dipole_coefficients(
    g: Inhomogeneity,
    profile: StripeProfile,
    diffusivities: EffectiveDiffusivities,
    a0: float,
    grid: TensorGrid,
    convention: str = "flux",
    tol: float = 1e-10,
) -> np.ndarray:
    """Leading far-field dipole per unit forcing amplitude.

    The phase far from the forcing is ``Theta = eps * a . grad G``.  With the
    unit-flux Green's function (``Delta_eff G = delta``) the coefficients are
    ``moment_j / avg(U'^2)``.  ``convention="radial"`` refers instead to the
    Green's function with ``dG/d|x|_eff = -|x|_eff^{1-n} / |S^{n-1}|``, which is
    ``-(d_par d_perp^{n-1})^{1/2}`` times the unit-flux one.
    """
    mom = dipole_moments(g, profile, a0, grid, tol)
    avg = translation_mode_average(profile)
    if convention == "flux":
        return mom / avg
    if convention == "radial":
        n = g.dim
        return -mom / (np.sqrt(diffusivities.d_par * diffusivities.d_perp ** (n - 1)) * avg)
    raise ConfigError("convention must be 'flux' or 'radial'")


def alpha_leading(curve: MelnikovCurve, a0, A00: float) -> np.ndarray:
    """First-order phase-shift coefficient ``M(a0) / A00``."""
    return curve(a0) / A00


@dataclass
class PinningReport:
    curve: MelnikovCurve
    zeros: list
    a0: float
    dipole: np.ndarray
    convention: str = "flux"

    def to_dict(self) -> dict:
        return {
            "offsets": [float(v) for v in self.curve.offsets],
            "m_samples": [float(v) for v in self.curve.values],
            "zeros": [z.to_dict() for z in self.zeros],
            "a0": float(self.a0),
            "dipole": [float(v) for v in self.dipole],
            "convention": self.convention,
        }

    def to_json(self, path) -> None:
        from .io_utils import dump_json

        dump_json(self.to_dict(), path)
