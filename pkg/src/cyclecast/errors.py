"""Exception hierarchy shared by all cyclecast modules."""


class CyclecastError(Exception):
    """Base class for all errors raised by cyclecast."""


class ConfigError(CyclecastError):
    """Invalid configuration or arguments (CLI exit code 1)."""


class DataError(CyclecastError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class InvariantError(CyclecastError):
    """Internal invariant violated (CLI exit code 3)."""
