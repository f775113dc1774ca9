"""Exception hierarchy shared across the package.

Each error carries a CLI category so commands can emit uniform
``CATEGORY: message`` diagnostics and distinct exit codes.
"""


class AdheadError(Exception):
    category = "ERROR"
    exit_code = 1


class ConfigError(AdheadError):
    """Invalid configuration value or unknown config key."""

    category = "CONFIG"
    exit_code = 2


class FormatError(AdheadError):
    """Malformed or truncated serialized file."""

    category = "FORMAT"
    exit_code = 3


class CompatibilityError(AdheadError):
    """Dimension or config-hash mismatch between artifacts."""

    category = "COMPAT"
    exit_code = 4


class ValidationError(AdheadError):
    """Data violates a documented invariant."""

    category = "VALIDATION"
    exit_code = 5


class DimensionError(ValidationError):
    """Array shapes disagree with an operation's contract."""


class MetricUndefinedError(ValidationError):
    """Metric has no defined value for the given labels (e.g. one class)."""
