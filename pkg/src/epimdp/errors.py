"""Exception types used to map failures onto distinct CLI exit codes."""


class EpimdpError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(EpimdpError):
    """Invalid or inconsistent experiment configuration."""

    exit_code = 2


class DataError(EpimdpError):
    """Missing or malformed input data (census, mobility, contacts)."""

    exit_code = 3


class NumericalError(EpimdpError):
    """A numerical routine failed (degenerate matrix, non-finite loss, ...)."""

    exit_code = 4
