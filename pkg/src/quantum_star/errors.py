"""Exception hierarchy shared by all modules.

Every error carries a ``module`` tag so the CLI can print module-tagged
diagnostics and map the failure onto an exit code.
"""


class StarGraphError(Exception):
    """Base class for all errors raised by this package."""

    module = "core"
    exit_code = 3


# graph-spectrum


class PoleCollision(StarGraphError):
    module = "spectrum"


class RootResidual(StarGraphError):
    module = "spectrum"


class SinGuard(StarGraphError):
    module = "spectrum"


# coupling-matrices


class OracleMismatch(StarGraphError):
    module = "couplings"

    def __init__(self, message, mismatches=()):
        super().__init__(message)
        self.mismatches = list(mismatches)


class NoConvergence(StarGraphError):
    module = "numerics"


# propagator


class TruncationTooSmall(StarGraphError):
    module = "propagator"


class SupportViolation(StarGraphError):
    module = "propagator"


class NormDriftExceeded(StarGraphError):
    module = "propagator"


class StepUnderflow(StarGraphError):
    module = "propagator"


# analysis


class MultiModal(StarGraphError):
    module = "analysis"


class NoOscillation(StarGraphError):
    module = "analysis"


# scenario-cli


class SchemaError(StarGraphError):
    module = "config"
    exit_code = 2


class UnknownPreset(SchemaError):
    pass
