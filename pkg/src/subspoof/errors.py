"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2, data-shaped
errors (AudioFormatError, ProtocolError, DataError) -> 3,
TrainingDivergence -> 4.
"""


class SubspoofError(Exception):
    """Base class for all package errors."""


class AudioFormatError(SubspoofError):
    """Unreadable, non-PCM16, non-mono or wrong-rate audio input."""


class ProtocolError(SubspoofError):
    """Malformed or inconsistent protocol / annotation / score files."""


class DataError(SubspoofError):
    """Corpus-level problems: empty partitions, missing files, bad shapes."""


class ConfigError(SubspoofError):
    """Invalid experiment or model configuration."""


class CheckpointError(SubspoofError):
    """Corrupt, tampered or architecturally incompatible checkpoints."""


class TrainingDivergence(SubspoofError):
    """Non-finite loss encountered during optimization."""
