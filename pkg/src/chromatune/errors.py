"""Exception types raised across the package."""


class ChromatuneError(Exception):
    """Base class for all chromatune errors."""


class ShapeError(ChromatuneError, ValueError):
    """Inputs have incompatible or unexpected dimensions."""


class InvalidInputError(ChromatuneError, ValueError):
    """Input values violate a precondition (e.g. non-finite pixels)."""


class InvalidStateError(ChromatuneError, ValueError):
    """Model parameters are unusable (wrong count or non-finite)."""


class ParameterError(ChromatuneError, ValueError):
    """A configuration value is outside its allowed range."""


class DivergenceError(ChromatuneError, RuntimeError):
    """Tuning aborted: loss or gradients became non-finite or exploded."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class TrainingError(ChromatuneError, RuntimeError):
    """Pretraining aborted: loss became non-finite."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class CheckpointError(ChromatuneError):
    """Base class for checkpoint I/O problems."""


class CheckpointParseError(CheckpointError, ValueError):
    """Checkpoint file is corrupt, truncated, or not a checkpoint at all."""


class IncompatibleCheckpointError(CheckpointError, ValueError):
    """Checkpoint was written with an unsupported schema version."""


class NoFramesError(ChromatuneError, FileNotFoundError):
    """A sequence directory contains no decodable frames."""


class DecodeError(ChromatuneError, ValueError):
    """A frame file could not be decoded."""

    def __init__(self, message: str, path):
        super().__init__(f"{message}: {path}")
        self.path = path
