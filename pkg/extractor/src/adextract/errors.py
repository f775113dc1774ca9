"""Error taxonomy shared by the extraction pipeline and its CLI."""


class ExtractError(Exception):
    category = "ERROR"
    exit_code = 1


class ConfigError(ExtractError):
    category = "CONFIG"
    exit_code = 2


class InputError(ExtractError):
    """Missing or unreadable images, masks, or checkpoints."""
    category = "INPUT"
    exit_code = 3


class ValidationError(ExtractError):
    """Dimension surprises caught before anything is written."""
    category = "VALIDATION"
    exit_code = 5
