"""Exception types shared across the package."""


class IngestionError(Exception):
    """Raised when a dataset file fails structural validation."""


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or fails its CRC."""


class NumericalFailure(Exception):
    """Raised when training produces a non-finite loss or activation."""
