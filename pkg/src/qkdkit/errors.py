"""Exception types shared across the package.

The CLI maps these onto exit codes, so estimation code should raise the
most specific class that applies.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or type invariant."""


class PlanarityError(ValidationError):
    """A planar (X-Z plane) operation was applied to an off-plane state."""


class WellPosednessError(RuntimeError):
    """The source states do not determine the linear system uniquely."""


class InconsistentYieldsError(RuntimeError):
    """Observed yields are not realizable by any physical channel/measurement."""


class UndefinedRateError(RuntimeError):
    """A rate is requested whose defining denominator is zero (no detections)."""
