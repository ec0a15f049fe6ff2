"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, data problems exit 3, numerical aborts exit 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, shape mismatch, or misuse of an API contract."""


class DataError(RuntimeError):
    """Missing, malformed, or inconsistent data files."""


class NumericsError(RuntimeError):
    """Non-finite values where finite ones are required (training abort)."""


class UnsupportedOpError(RuntimeError):
    """An op on the differentiation path lacks a differentiable backward."""
