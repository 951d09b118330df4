"""Exception hierarchy shared by all modules.

The CLI maps each class onto an exit code, so raise the most specific one.
"""


class OdeWaveError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InvalidInputError(OdeWaveError, ValueError):
    """Malformed or inconsistent input (bad shapes, non-finite entries, grid mismatch)."""

    exit_code = 2


class ConfigurationError(InvalidInputError):
    """A run configuration violates a numerical constraint (e.g. CFL)."""


class DesignInfeasibleError(OdeWaveError):
    """The requested controller/observer cannot be synthesized for this plant."""

    exit_code = 3


class BlowUpError(OdeWaveError, FloatingPointError):
    """A simulation produced non-finite values.

    ``t`` is the simulation time at which the blow-up was detected and
    ``trace`` (if set) holds the samples recorded before it.
    """

    exit_code = 4

    def __init__(self, message, t, trace=None):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t
        self.trace = trace


class FitFailedError(OdeWaveError):
    """Exponential fit impossible (no usable samples in the window)."""
