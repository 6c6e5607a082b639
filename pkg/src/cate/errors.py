"""Exception hierarchy shared across the toolkit.

Subclassing ValueError keeps call sites compatible with plain-python
expectations while letting the CLI map error families to exit codes.
"""


class CateError(ValueError):
    """Base class for all toolkit errors."""


class DataError(CateError):
    """Bad input data: manifests, clips, tracks, question files."""


class ConfigError(CateError):
    """Invalid configuration or parameter combination."""
