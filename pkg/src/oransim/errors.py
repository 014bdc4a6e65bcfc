"""Exception types shared across the package."""


class ProtocolError(Exception):
    """Malformed or unknown E2-lite traffic."""


class NotFound(KeyError):
    """A requested RIC database key does not exist."""


class SdlPermissionError(PermissionError):
    """An SDL handle lacks the capability needed for an operation."""


class Unsupported(Exception):
    """Operation is not defined for the given input (e.g. timing on a virtual-clock trace)."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
