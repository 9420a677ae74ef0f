"""Sectioned ``key = value`` pipeline configuration.

Example::

    [stripe]
    mu = 0.2
    k = 1.0
    n_modes = 64

    [grid]
    Nx = 512
    Ny = 512
    periods = 32

    [forcing]
    kind = gaussian
    amplitude = 1.0
    center = 0.0, 0.0
    widths = 2.0, 2.0
    gamma = 2.5

    [solve]
    eps = 0.02, 0.04

Every key has a default; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .grids import SpectralGrid2D
from .io_utils import dumps_json
from .pinning import Inhomogeneity, gamma_window


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    mu: float = 0.2
    k: float = 1.0
    n_modes: int = 64
    Nx: int = 512
    Ny: int = 512
    periods: int = 32
    Ly: float | None = None
    forcing: dict = field(default_factory=lambda: {
        "kind": "gaussian", "amplitude": 1.0, "center": (0.0, 0.0), "widths": (2.0, 2.0)})
    gamma: float = 2.5
    eps: tuple = (0.02, 0.04)
    n_offsets: int = 64
    zero_rule: str = "positive_slope"
    filter_radius: float = 0.125
    fit_inner: float = 2.0
    fit_outer: float | None = None
    decay_points: int = 8
    newton_tol: float = 1e-10
    newton_max_iter: int = 12
    precond: str = "bloch"
    guess: str = "ansatz"
    a0_consistency: float = 0.3
    a0_floor: float = 1e-6
    dipole_rtol: float = 0.1
    hierarchy_ratio: float = 0.3
    output: str = "pinstripe-out"
    seed: int = 0

    def __post_init__(self):
        lo, hi = gamma_window(2)
        if not lo < self.gamma < hi:
            raise ConfigError(f"gamma = {self.gamma} outside ({lo}, {hi}) for n = 2")
        eps = tuple(float(e) for e in self.eps)
        if any(e < 0 for e in eps):
            raise ConfigError("eps values must be non-negative")
        if list(eps) != sorted(eps) or len(set(eps)) != len(eps):
            raise ConfigError("eps values must be strictly increasing")
        object.__setattr__(self, "eps", eps)
        if self.Nx % self.periods:
            raise ConfigError("Nx must be a multiple of the number of periods")
        if self.k != 1.0:
            raise ConfigError("the commensurate box assumes k = 1")
        if self.fit_outer is not None and self.fit_outer <= self.fit_inner:
            raise ConfigError("fit annulus is empty")
        self.inhomogeneity()  # validates the forcing section

    @property
    def grid(self) -> SpectralGrid2D:
        return SpectralGrid2D.commensurate(self.Nx, self.Ny, self.periods, self.Ly)

    @property
    def annulus(self) -> tuple:
        return (self.fit_inner, self.fit_outer if self.fit_outer is not None
                else self.grid.Lx / 4)

    def inhomogeneity(self) -> Inhomogeneity:
        f = dict(self.forcing)
        kind = f.pop("kind", "gaussian")
        try:
            if kind == "gaussian":
                return Inhomogeneity.gaussian(float(f.get("amplitude", 1.0)),
                                              tuple(f.get("center", (0.0, 0.0))),
                                              tuple(f.get("widths", (2.0, 2.0))), self.gamma)
            if kind == "bump":
                return Inhomogeneity.bump(float(f.get("amplitude", 1.0)),
                                          tuple(f.get("center", (0.0, 0.0))),
                                          float(f.get("radius", 2.0)),
                                          f.get("recipe", "quintic"), self.gamma)
            if kind == "gaussian_sum":
                a, c, w = f["amplitudes"], f["centers"], f["widths"]
                terms = [{"amplitude": a[i], "center": c[2 * i:2 * i + 2],
                          "widths": w[2 * i:2 * i + 2]} for i in range(len(a))]
                return Inhomogeneity.gaussian_sum(terms, self.gamma)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad forcing parameters: {exc}") from exc
        raise ConfigError(f"forcing kind {kind!r} is not available from a config file")

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        """Every parameter except the output location."""
        d = asdict(self)
        d.pop("output")
        d["eps"] = list(self.eps)
        d["forcing"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.forcing.items()}
        return d


_SCHEMA = {
    "stripe": {"mu": float, "k": float, "n_modes": int},
    "grid": {"Nx": int, "Ny": int, "periods": int, "Ly": float},
    "forcing": None,  # free-form, validated by PipelineConfig.inhomogeneity
    "pinning": {"n_offsets": int, "zero_rule": str},
    "farfield": {"filter_radius": float, "fit_inner": float, "fit_outer": float,
                 "decay_points": int},
    "solve": {"eps": _floats, "newton_tol": float, "newton_max_iter": int, "precond": str,
              "guess": str},
    "tolerances": {"a0_consistency": float, "a0_floor": float, "dipole_rtol": float,
                   "hierarchy_ratio": float},
    "output": {"output": str, "seed": int},
}

_FORCING_VECTORS = {"center", "widths", "amplitudes", "centers"}


def parse_config(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    values: dict = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        items = dict(cp.items(section))
        if section == "forcing":
            forcing = {}
            for key, raw in items.items():
                if key == "gamma":
                    values["gamma"] = float(raw)
                elif key in _FORCING_VECTORS:
                    forcing[key] = _floats(raw)
                elif key in ("kind", "recipe"):
                    forcing[key] = raw.strip()
                else:
                    try:
                        forcing[key] = float(raw)
                    except ValueError as exc:
                        raise ConfigError(f"forcing.{key} must be a number") from exc
            values["forcing"] = forcing
            continue
        for key, raw in items.items():
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                values[key] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from exc
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def default_config() -> PipelineConfig:
    return PipelineConfig()


def config_digest(cfg: PipelineConfig) -> str:
    """Stable short hash of the configuration, recorded in reports."""
    return hashlib.sha256(dumps_json(cfg.to_dict()).encode()).hexdigest()[:16]
