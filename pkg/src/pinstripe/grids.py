"""Uniform tensor grids on centered boxes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class TensorGrid:
    """Uniform periodic-style grid on ``prod_i [-L_i/2, L_i/2)``.

    Trapezoid weights are uniform, which is spectrally accurate both for
    periodic integrands and for integrands that decay rapidly inside the box.
    """

    shape: tuple
    lengths: tuple

    def __post_init__(self):
        if len(self.shape) != len(self.lengths):
            raise ValueError("shape and lengths must have the same length")
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> tuple:
        return tuple(
            -L / 2 + h * np.arange(n) for L, h, n in zip(self.lengths, self.spacing, self.shape)
        )

    def mesh(self) -> tuple:
        return np.meshgrid(*self.axes, indexing="ij")

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.mesh()))

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_volume)

    def wavenumbers(self) -> tuple:
        return tuple(
            2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.shape, self.spacing)
        )


class SpectralGrid2D(TensorGrid):
    """Doubly periodic grid; ``Lx = 2 pi P`` makes the stripe exactly periodic."""

    def __init__(self, Nx: int, Ny: int, Lx: float, Ly: float):
        super().__init__((Nx, Ny), (Lx, Ly))

    @classmethod
    def commensurate(cls, Nx: int, Ny: int, periods: int, Ly: float | None = None):
        Lx = 2 * np.pi * periods
        return cls(Nx, Ny, Lx, Lx if Ly is None else Ly)

    @property
    def Nx(self) -> int:
        return self.shape[0]

    @property
    def Ny(self) -> int:
        return self.shape[1]

    @property
    def Lx(self) -> float:
        return self.lengths[0]

    @property
    def Ly(self) -> float:
        return self.lengths[1]

    @property
    def dx(self) -> float:
        return self.spacing[0]

    @property
    def dy(self) -> float:
        return self.spacing[1]

    @property
    def periods(self) -> int | None:
        """Number of stripe periods along ``x_1``, or ``None`` if not an integer."""
        P = self.Lx / (2 * np.pi)
        return int(round(P)) if abs(P - round(P)) < 1e-12 * max(1.0, P) else None

    def to_dict(self) -> dict:
        return {"Nx": self.Nx, "Ny": self.Ny, "Lx": self.Lx, "Ly": self.Ly}
