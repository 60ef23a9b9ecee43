"""Exception types shared across the package."""


class GavatarError(Exception):
    """Base class for all package errors."""


class ConfigError(GavatarError, ValueError):
    """Invalid configuration or unsupported parameter value."""


class ShapeError(GavatarError, ValueError):
    """Array dimensions inconsistent with the model or each other."""


class ContractError(GavatarError, ValueError):
    """Input violates a documented invariant (e.g. non-normalized weights)."""


class CorruptionError(GavatarError):
    """Bitstream or file failed to parse (bad magic, truncation, bad length)."""


class FitError(GavatarError):
    """Optimization cannot continue (e.g. every Gaussian was pruned)."""
