"""Exception hierarchy shared by all stages."""


class PinstripeError(Exception):
    """Base class; ``stage`` is filled in by the pipeline for attribution."""

    stage = None


class NumericalFailure(PinstripeError):
    """A solver or eigen-computation failed to produce a usable result."""


class VerificationFailure(PinstripeError):
    """A computed identity or invariant was violated."""


class ConfigError(PinstripeError, ValueError):
    """Bad configuration or bad call arguments."""


# stripe_core
class NonConvergence(NumericalFailure):
    def __init__(self, msg, residual=None, history=None):
        super().__init__(msg)
        self.residual = residual
        self.history = history or []


class TrivialSolution(NumericalFailure):
    pass


class OutsideExistence(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    pass


class LengthMismatch(ConfigError):
    pass


# bloch
class TruncationTooSmall(ConfigError):
    pass


class BranchCrossing(NumericalFailure):
    pass


class SimplicityFailure(NumericalFailure):
    pass


class SolvabilityViolation(VerificationFailure):
    pass


# pinning
class TailTooHeavy(NumericalFailure):
    pass


class DegeneratePinning(NumericalFailure):
    pass


class IdenticallyZero(NumericalFailure):
    """M vanishes identically; reported rather than fatal by callers."""


# farfield
class OriginEvaluation(ConfigError):
    pass


class KappaNonPositive(NumericalFailure):
    pass


class KappaOutOfTable(NumericalFailure):
    pass


class IdentityViolation(VerificationFailure):
    pass


class SlowConvergence(NumericalFailure):
    pass


# full solver
class IncommensurateBox(ConfigError):
    pass


class BranchUnavailable(NumericalFailure):
    pass


class NewtonDiverged(NumericalFailure):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class JacobianSingular(NumericalFailure):
    pass


class PhaseUnwrapFailure(NumericalFailure):
    pass


class IllConditionedFit(NumericalFailure):
    pass


class StepUnstable(NumericalFailure):
    pass


class IoFailure(PinstripeError, OSError):
    pass


class NegativeDiffusivity(UserWarning):
    """A diffusivity came out non-positive; stripes are not diffusively stable."""
