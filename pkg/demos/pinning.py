"""Pinning a stripe on a localized Gaussian inhomogeneity.

The solvability function M(x0) is sampled over one period, its simple zeros
are located, and the dipole coefficients of the far-field phase are computed
at the stable (positive-slope) zero.

Run:  python demos/pinning.py
"""

import numpy as np

from pinstripe import (
    Inhomogeneity, SpectralGrid2D, diffusivities_integral, dipole_coefficients,
    find_pinning, melnikov, select_zero, solve_stripe,
)

prof = solve_stripe(0.2)
diff = diffusivities_integral(prof)
grid = SpectralGrid2D.commensurate(512, 512, 32)

for label, g in [
    ("centered Gaussian", Inhomogeneity.gaussian(1.0, (0.0, 0.0), (2.0, 2.0), 2.5)),
    ("off-center Gaussian", Inhomogeneity.gaussian(1.0, (0.7, 0.0), (1.5, 3.0), 2.5)),
]:
    offsets = 2 * np.pi * np.arange(64) / 64
    curve = melnikov(g, prof, offsets, grid)
    zeros = find_pinning(curve)
    z = select_zero(zeros, "positive_slope")
    a = dipole_coefficients(g, prof, diff, z.x, grid, "flux")
    print(f"{label}:")
    print(f"  zeros  {[round(zz.x, 6) for zz in zeros]}")
    print(f"  stable zero a0 = {z.x:.6f}, slope M'(a0) = {z.slope:.4e}")
    print(f"  dipole per unit eps: a1 = {a[0]:.4f}, a2 = {a[1]:.2e}")
