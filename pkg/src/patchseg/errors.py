"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented domain."""


class ConfigError(ValueError):
    """A configuration or model document failed validation."""
