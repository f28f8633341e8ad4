"""Exception types shared across the package."""


class StarV2XError(Exception):
    """Base class for all package-specific errors."""


class DegenerateGeometry(StarV2XError):
    """A link distance collapsed to zero (or below)."""


class InsufficientVehicles(StarV2XError):
    """A scenario drop could not supply the requested VUE/V2V counts."""


class IndexOutOfRange(StarV2XError):
    """A phase-shift or catalog index fell outside its valid range."""


class OffGridIncrement(StarV2XError):
    """A phase increment is not a multiple of the quantization step."""


class InvalidProbability(StarV2XError):
    """A probability parameter is outside (0, 1)."""


class InvalidAction(StarV2XError):
    """An action index fell outside the factored catalog."""


class ShapeMismatch(StarV2XError):
    """Tensor shapes are inconsistent for the requested operation."""


class NonFiniteValue(StarV2XError):
    """A NaN or Inf appeared in a numeric computation."""


class BufferUnderflow(StarV2XError):
    """A replay buffer was sampled before holding a full batch."""


class DegenerateExpansionPoint(StarV2XError):
    """A Taylor expansion point is non-positive."""


class Infeasible(StarV2XError):
    """A beamforming problem admits no feasible point."""


class SpaceTooLarge(StarV2XError):
    """The joint action space exceeds the brute-force enumeration cap."""
