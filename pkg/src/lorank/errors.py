"""Exception taxonomy.

Reader-side rejections get one class per violated invariant so callers (and
tests) can tell exactly which contract a bad file broke.
"""


class LorankError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LorankError):
    """Operand dimensions are incompatible."""


class NumericError(LorankError):
    """A computation produced a non-finite value."""


class ConstraintError(LorankError):
    """An allocation problem violates its feasibility constraints."""


class EmptyCalibrationError(LorankError):
    """Finalize was called on an accumulator with zero batches."""


class ConfigError(LorankError):
    """A run configuration is malformed or inconsistent."""


class PatternError(LorankError):
    """Base class for pattern/scores file rejections."""


class PatternJsonError(PatternError):
    """The file is not valid JSON."""


class PatternSchemaError(PatternError):
    """The file declares an unknown schema version."""


class PatternFormatError(PatternError):
    """A required field is missing or has the wrong type."""


class PatternBudgetError(PatternError):
    """Ranks do not sum to the declared budget."""


class PatternRatioError(PatternError):
    """An alpha entry breaks the alpha/rank ratio invariant."""


class PatternBoundsError(PatternError):
    """A rank falls outside the declared [r_min, r_max] bounds."""
