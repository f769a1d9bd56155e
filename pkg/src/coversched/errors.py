"""Exception types shared across the package."""


class CoverschedError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(CoverschedError):
    """Raised when tensor operands have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class NonScalarLoss(CoverschedError):
    """Raised when backward() is called on a non-scalar node."""


class GraphConsumed(CoverschedError):
    """Raised on a second backward() through the same graph sink."""


class InvalidSchedule(CoverschedError):
    """Raised when a schedule is not a valid permutation over the map's areas."""


class GenerationTimeout(CoverschedError):
    """Raised when rejection sampling cannot place an area (map too dense)."""


class DegenerateMap(CoverschedError):
    """Raised when a raw map has a zero-extent bounding box."""


class ParseError(CoverschedError):
    """Raised for a malformed line in a map file; carries the line number."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class TooLarge(CoverschedError):
    """Raised when an instance exceeds an exact solver's size cap."""


class NonPositiveLength(CoverschedError):
    """Raised when a gap metric receives a non-positive tour length."""


class EmptyDataset(CoverschedError):
    """Raised when an evaluation is requested over zero instances."""


class EmptyBatch(CoverschedError):
    """Raised when a training loss is requested over zero rollouts."""


class AllVisited(CoverschedError):
    """Raised when area selection is requested with no unvisited area left."""


class MatrixOverflow(CoverschedError):
    """Raised when scaled edge weights exceed the safe integer range."""
