"""Residual of the dipole phase ansatz far from the defect.

The ansatz is evaluated pointwise on a decade of radii scaled by the
anisotropy length; the raw residual decays like r^-3 and, after removing
its leading term, like r^-4.

Run:  python demos/farfield_decay.py   (a few seconds)
"""

import numpy as np

from pinstripe import (
    AnisotropicGreens, DipolePhase, StripeFamily, diffusivities_integral,
    residual_decay, solve_stripe,
)
from pinstripe.farfield import asymptotic_decade

prof = solve_stripe(0.2)
diff = diffusivities_integral(prof)
G = AnisotropicGreens(diff.d_par, diff.d_perp)
phase = DipolePhase((35.83 * 0.04, 0.0), G)
radii = asymptotic_decade(diff, n=6)
fit = residual_decay(StripeFamily(prof), phase, radii)

print("      r          |R|        |R - leading|")
for r, a, b in fit.rows():
    print(f"{r:10.1f}  {a:.4e}  {b:.4e}")
print(f"slope {fit.slope:.3f} +- {fit.stderr:.3f}   subtracted {fit.slope_subtracted:.3f}"
      f" +- {fit.stderr_subtracted:.3f}")
print(f"(radii span {np.min(radii):.0f} to {np.max(radii):.0f})")
