"""Exception types shared across the package."""


class RankRegError(Exception):
    """Base class for all rankreg errors."""


class DimensionError(RankRegError):
    """Shapes or sizes are incompatible with the requested operation."""


class ZeroRowError(RankRegError):
    """A row expected to be normalizable has (numerically) zero norm."""

    def __init__(self, index: int, norm: float = 0.0):
        self.index = index
        self.norm = norm
        super().__init__(f"row {index} has near-zero norm {norm:.3e}")


class NotSymmetricError(RankRegError):
    """Input matrix is not symmetric within tolerance."""


class ConvergenceError(RankRegError):
    """An iterative procedure failed to converge within its budget."""


class BadRhoError(RankRegError):
    """Energy threshold rho outside (0, 1]."""


class BadSimplexError(RankRegError):
    """Eigenvalue vector is not a probability distribution within tolerance."""


class ShrinkError(RankRegError):
    """Attempted to shrink a classification head."""


class ClassOverlapError(RankRegError):
    """New task classes overlap with classes already seen."""


class MissingSnapshotError(RankRegError):
    """A strategy requires a network snapshot that is not available."""


class UnseenClassError(RankRegError):
    """Evaluation data contains a class the model has never seen."""


class EmptyLogError(RankRegError):
    """A metric was requested over an empty trajectory."""


class MissingBaselineError(RankRegError):
    """Base-task accuracy at session 0 is required but absent."""


class ShapeMismatchError(RankRegError):
    """Two networks do not share an architecture."""


class BadSpreadError(RankRegError):
    """Non-positive within-class spread."""


class TruncatedFileError(RankRegError):
    """Binary dataset file size is not a whole number of records."""


class LabelRangeError(RankRegError):
    """A parsed label falls outside its valid range."""


class BadSplitError(RankRegError):
    """Base/split sizes incompatible with the number of classes."""


class MatrixFormatError(RankRegError):
    """Malformed matrix CSV; carries a 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(RankRegError):
    """Invalid experiment configuration; carries all field errors."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
