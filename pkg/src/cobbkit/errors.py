"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI uses when it escapes.
"""


class CobbKitError(Exception):
    exit_code = 1


class ParseError(CobbKitError):
    """Malformed input file: wrong field count, non-numeric value, bad schema."""

    exit_code = 3


class ValidationError(CobbKitError, ValueError):
    """Input that parses but violates a geometric or domain invariant."""

    exit_code = 4


class ConfigError(CobbKitError, ValueError):
    """Invalid or inconsistent configuration values."""

    exit_code = 5
