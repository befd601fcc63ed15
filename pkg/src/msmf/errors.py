"""Exception taxonomy shared across the package.

The command line maps these onto exit codes (see cli.py): usage errors exit 1,
configuration/data/parse errors exit 2, numeric/training errors exit 3.
"""


class MsmfError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MsmfError):
    """Operand shapes are incompatible; message names both shapes."""


class ConfigurationError(MsmfError):
    """A configuration value violates its contract."""


class ContractError(MsmfError):
    """A caller violated an operation precondition."""


class DataError(MsmfError):
    """Input data cannot be used for the requested operation."""


class ParseError(DataError):
    """A CSV file is malformed; message carries file and line number."""


class NumericError(MsmfError):
    """A computation produced or encountered a non-finite value."""


class TrainingError(MsmfError):
    """Optimization diverged; message carries epoch and batch index."""


class MetricError(MsmfError):
    """A metric is undefined for the given inputs."""


class ResourceError(MsmfError):
    """A requested exhaustive computation exceeds the supported size."""
