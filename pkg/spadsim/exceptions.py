"""
Exception hierarchy for the spadsim toolkit.

Every service raises its own error class; all of them share
``SpadSimError`` so the CLI can map failures onto exit codes.
"""


class SpadSimError(Exception):
    """Base class for all toolkit errors."""

    pass


class ConfigError(SpadSimError):
    """Raised when a run configuration is missing, malformed or inconsistent."""

    pass
