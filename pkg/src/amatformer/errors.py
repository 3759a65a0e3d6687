"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message text: FileFormatError -> 3, shape/index
errors -> 4, numeric errors -> 5.
"""


class AmatformerError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(AmatformerError):
    """Operands or containers have incompatible shapes."""


class NotScalar(AmatformerError):
    """backward() was asked to differentiate a non-scalar value."""


class DegenerateWidth(AmatformerError):
    """A feature width too small for the requested normalization."""


class EmptySide(AmatformerError):
    """A matching problem with zero keypoints on one side."""


class NonFiniteValue(AmatformerError):
    """NaN or Inf where finite values are required."""


class NonFiniteLoss(NonFiniteValue):
    """Training loss became NaN/Inf; carries the offending step."""

    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite loss at step {step}")
        self.step = step


class LengthMismatch(ShapeMismatch):
    """Two sequences that must align have different lengths."""


class IndexOutOfBounds(AmatformerError):
    """A ground-truth or anchor index outside the valid range."""


class TooFewTargets(AmatformerError):
    """Anchor selection needs at least two target points for a ratio."""


class NoCandidates(AmatformerError):
    """Anchor selection filtered away every candidate pair."""


class InvalidWarp(AmatformerError):
    """A synthetic warp whose linear part is singular."""


class EmptyGroundTruth(AmatformerError):
    """Recall is undefined when the ground-truth match set is empty."""


class FileFormatError(AmatformerError):
    """Bad magic, version, or truncation in a serialized artifact."""
