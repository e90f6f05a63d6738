"""Exception hierarchy shared across the package."""


class CavityJumpsError(Exception):
    """Base class for all package errors."""


class ParameterError(CavityJumpsError, ValueError):
    """Invalid physical parameter or malformed configuration."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(CavityJumpsError):
    """Liouville space would exceed the configured size cap."""


class SolverError(CavityJumpsError):
    """Steady-state solve failed or produced an unusable state."""


class TruncationError(SolverError):
    """Population in the highest Fock level exceeds tolerance."""


class UnimodalError(CavityJumpsError):
    """Count histogram does not separate into two peaks."""


class FitDivergedError(CavityJumpsError):
    """A least-squares fit failed to converge to a valid optimum."""


class AllAmbiguousError(CavityJumpsError):
    """A trace contains no unambiguously classified bin."""


class NoAtomError(CavityJumpsError):
    """No coupled-atom segment was found in a trace."""


class TraceTooShortError(CavityJumpsError):
    """Trace length insufficient for the requested analysis."""


class NegativeDecayError(CavityJumpsError):
    """Correlation fit returned a non-positive decay rate."""


class TooFewDwellsError(CavityJumpsError):
    """Not enough complete dwell intervals for a rate estimate."""


class DegenerateDataError(CavityJumpsError):
    """Spectrum data carries no information about the fit parameters."""


class NonPhysicalError(CavityJumpsError):
    """Input yields a physically meaningless result."""
