"""Exceptions raised by the simulation engine."""


class FedTLUError(Exception):
    """Base class for all engine errors."""


class ConfigError(FedTLUError):
    """Exception for an invalid or missing experiment configuration."""


class ArchitectureError(FedTLUError):
    """Exception for invalid architecture dimensions."""


class ShapeMismatchError(FedTLUError):
    """Exception for model states or tensors that are not shape-congruent."""


class TokenRangeError(FedTLUError):
    """Exception for token ids outside the vocabulary."""


class DataError(FedTLUError):
    """Exception for unusable corpora, shards or token streams."""


class CheckpointError(FedTLUError):
    """Exception for corrupt or inconsistent checkpoint files."""


class AggregationError(FedTLUError):
    """Exception for invalid aggregation inputs."""


class SelectionError(FedTLUError):
    """Exception for invalid block selection or update plans."""


class ScheduleError(FedTLUError):
    """Exception for invalid portion schedule inputs."""


class ConvergenceError(FedTLUError):
    """Exception for iterative solvers that fail to converge."""


class ReportError(FedTLUError):
    """Exception for reports that cannot be written."""
