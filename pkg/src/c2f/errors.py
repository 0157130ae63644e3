"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/validation problems
exit 2, I/O problems (plain OSError) exit 3.
"""


class DimensionError(ValueError):
    """Array shapes incompatible with the requested operation."""


class EmptyInputError(ValueError):
    """An operation received no valid entries to work on."""


class ContractError(RuntimeError):
    """An API contract was violated (non-scalar loss, spent tape, ...)."""


class AnnotationError(ValueError):
    """Malformed interval annotation (out of range, inverted, bad class)."""


class ConfigError(ValueError):
    """Invalid or mutually inconsistent configuration values."""


class ValidationError(ValueError):
    """Inputs reference unknown entities (e.g. predictions for unknown videos)."""
