"""Exceptions shared across the package.

Validation problems (bad config, bad scenario declaration, malformed input)
raise ``ValidationError``; failures of the numerics themselves (lost
ellipticity, broken centering, diverging particles) raise subclasses of
``NumericalError``.  The CLI maps the two families to exit codes 2 and 3.
"""


class ValidationError(ValueError):
    """Malformed configuration or input that fails schema / precondition checks."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical methods themselves."""


class EllipticityError(NumericalError):
    """Diffusion matrix lost uniform positive-definiteness on the sampled grid."""


class CenteringError(NumericalError):
    """Fast drift is not centered against the invariant measure, so the
    cell problem has no solution."""


class SolverError(NumericalError):
    """Linear solve failed or produced a solution violating its residual check."""


class SimulationError(NumericalError):
    """Particle simulation aborted (NaN/inf positions or a moment cap hit)."""
