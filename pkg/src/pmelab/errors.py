"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so library code should raise the most
specific class that applies.
"""


class PmelabError(Exception):
    """Base class for all package errors."""


class ConfigError(PmelabError):
    """Malformed or schema-violating configuration (CLI exit 2)."""


class RegimeError(PmelabError):
    """Parameters outside the validity window of the requested regime (exit 3)."""


class VerificationFailure(PmelabError):
    """A verification stage (residual sweep, sandwich, fit gate) failed (exit 1)."""


class NumericalError(PmelabError):
    """Integrator/root-finder/CFL breakdown, or geometry sampled too short (exit 4)."""


class ConstraintError(RegimeError):
    """A named parameter constraint of a closed-form construction is violated."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"constraint violated: {constraint}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
