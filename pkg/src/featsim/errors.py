"""Exception types shared across the package."""


class FeatsimError(Exception):
    """Base class for all featsim errors."""


class ShapeError(FeatsimError):
    """An operation precondition on shapes or sizes was violated."""


class ConfigError(FeatsimError):
    """Invalid configuration (bad field value, unknown key, unusable CLI input)."""


class TsrError(FeatsimError):
    """Base class for TSR container failures."""


class TsrBadMagic(TsrError):
    """File does not start with the TSR1 magic bytes."""


class TsrTruncated(TsrError):
    """File ends before the payload declared by the header."""


class TsrExtentOverflow(TsrError):
    """Declared extents are out of range or inconsistent with the payload."""


class CheckpointError(FeatsimError):
    """A checkpoint directory is missing, corrupt, or inconsistent."""


class TrainingError(FeatsimError):
    """Training aborted (non-finite loss, missing prerequisite, bad dataset)."""


class GenerationError(FeatsimError):
    """Phantom generation could not satisfy its placement constraints."""
