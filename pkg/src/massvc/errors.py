"""Exception hierarchy shared across the package."""


class MassError(Exception):
    """Base class for all errors raised by this package."""


class InputError(MassError):
    """Malformed or out-of-contract input data (audio, features, shapes)."""


class ParameterError(MassError):
    """Invalid configuration value or label."""


class InsufficientDataError(MassError):
    """Not enough data to compute a statistic."""


class DatasetError(MassError):
    """Corpus layout or index problem."""


class FormatError(MassError):
    """File does not parse as the expected binary format."""


class FormatVersionError(FormatError):
    """File parses but carries an unsupported format version."""


class NumericalError(MassError):
    """Non-finite value produced where a finite one is required."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss.

    ``checkpoint_path`` names the last good checkpoint, or None when no
    checkpoint had been written yet.
    """

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class StageError(MassError):
    """Failure inside a named pipeline stage."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
