"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(Exception):
    """Missing, malformed, or incompatible data artifact (CLI exit code 3)."""


class EmptyRingError(ValueError):
    """A detector ring holds no detected photons where some are required."""
