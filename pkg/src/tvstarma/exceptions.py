"""Error types separating bad inputs from numerical failures.

Validation problems raise plain ``ValueError``; the classes below mark
failures of the numerics themselves (the CLI maps them to exit code 3).
"""


class NumericalError(RuntimeError):
    """A computation failed for numerical reasons."""


class RankDeficiencyError(NumericalError):
    """The regression design is rank deficient at the working tolerance."""


class DivergenceError(NumericalError):
    """A recursive estimate left the plausible region."""


class CovarianceFactorizationError(NumericalError):
    """A covariance matrix could not be factorized, even after jitter."""
