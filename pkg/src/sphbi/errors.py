"""Exception types shared across the pipeline."""


class SphbiError(Exception):
    """Base class for all package errors."""


class FormatError(SphbiError, ValueError):
    """Input file does not follow the expected binary or text layout."""


class ContractError(SphbiError, ValueError):
    """A function was called with arguments violating its contract."""


class ConfigError(SphbiError, ValueError):
    """Invalid user configuration (ratios, scenario segments, run options)."""


class ShapeError(ContractError):
    """Tensor dimensions are incompatible with a layer."""


class RunFailure(SphbiError, RuntimeError):
    """A training run aborted (non-finite loss, missing data)."""
