"""Exception hierarchy shared by every gramtraj module."""


class GramTrajError(Exception):
    """Base class for all library errors."""


class InvalidInput(GramTrajError, ValueError):
    """Malformed array input (wrong shape, too few points, non-finite)."""


class InvalidParameter(GramTrajError, ValueError):
    """A scalar parameter is outside its admissible range."""


class DegenerateConfiguration(GramTrajError, ValueError):
    """Centered landmarks do not have rank 2 (e.g. collinear points)."""


class DimensionMismatch(GramTrajError, ValueError):
    """Operands live on S+(2, n) for different landmark counts n."""


class NotPositiveDefinite(GramTrajError, ValueError):
    """A matrix expected to be SPD is asymmetric or has a non-positive eigenvalue."""


class NotHorizontal(GramTrajError, ValueError):
    """A tangent vector violates the horizontality condition M^T U = 0."""


class EmptySequence(GramTrajError, ValueError):
    """A sequence has fewer than two frames."""


class DegenerateFrame(GramTrajError, ValueError):
    """A frame of a sequence failed validation."""

    def __init__(self, index, reason=""):
        self.index = index
        self.reason = reason
        super().__init__(f"frame {index} is degenerate: {reason}" if reason else f"frame {index} is degenerate")


class InsufficientClasses(GramTrajError, ValueError):
    """Training data must contain at least two classes."""


class LengthMismatch(GramTrajError, ValueError):
    """Paired sequences (e.g. predictions and truths) differ in length."""


class ParseError(GramTrajError, ValueError):
    """A record of a sequence file could not be parsed."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InconsistentFrameShape(GramTrajError, ValueError):
    """Frames of one record do not share the same n x 2 shape."""

    def __init__(self, record_id, message=""):
        self.record_id = record_id
        super().__init__(f"record {record_id!r}: {message or 'inconsistent frame shapes'}")
