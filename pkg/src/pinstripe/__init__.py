"""Pinned, dipole-deformed stripes of the locally forced Swift-Hohenberg equation."""

__version__ = "0.1.0"

from .bloch import (  # noqa: E402
    EffectiveDiffusivities,
    assemble_bloch,
    critical_branch,
    diffusivities_fit,
    diffusivities_integral,
)
from .config import PipelineConfig, load_config, parse_config  # noqa: E402
from .farfield import (  # noqa: E402
    AnisotropicGreens,
    DipolePhase,
    build_ansatz,
    build_phase,
    jacobi_diagonal,
    residual_decay,
    residual_R,
    w_parallel_check,
)
from .grids import SpectralGrid2D, TensorGrid  # noqa: E402
from .pinning import (  # noqa: E402
    Inhomogeneity,
    dipole_coefficients,
    find_pinning,
    melnikov,
    select_zero,
)
from .solver import (  # noqa: E402
    DeformedSolution,
    ModeFilterPair,
    apply_mode_filters,
    discrete_bloch,
    extract_phase,
    fit_dipole,
    inverse_bloch,
    newton_solve,
    time_relax,
)
from .stripe_core import StripeFamily, StripeProfile, solve_stripe  # noqa: E402

__all__ = [
    "AnisotropicGreens", "DeformedSolution", "DipolePhase", "EffectiveDiffusivities",
    "Inhomogeneity", "ModeFilterPair", "PipelineConfig", "SpectralGrid2D", "StripeFamily",
    "StripeProfile", "TensorGrid", "apply_mode_filters", "assemble_bloch", "build_ansatz",
    "build_phase", "critical_branch", "diffusivities_fit", "diffusivities_integral",
    "dipole_coefficients", "discrete_bloch", "extract_phase", "find_pinning", "fit_dipole",
    "inverse_bloch", "jacobi_diagonal", "load_config", "melnikov", "newton_solve",
    "parse_config", "residual_R", "residual_decay", "select_zero", "solve_stripe",
    "time_relax", "w_parallel_check",
]
