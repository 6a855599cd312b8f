"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class FormatError(ValueError):
    """A serialized artifact (.flo, match file, checkpoint) is malformed."""


class DegenerateSampleError(ValueError):
    """A minimal sample is rank-deficient and defines no model."""


class InsufficientDataError(ValueError):
    """Fewer data points than the minimal sample size."""


class NoModelError(RuntimeError):
    """Robust estimation exhausted its budget without a single valid model."""


class IngestionError(ValueError):
    """A dataset directory is incomplete or inconsistent."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""
