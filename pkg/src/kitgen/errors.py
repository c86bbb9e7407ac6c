"""Exception hierarchy shared across the toolkit.

The three branches map onto the CLI exit-code contract: configuration
problems (exit 2), data/validation problems (exit 3), and transport
exhaustion (exit 4).
"""


class KitgenError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(KitgenError):
    """Bad configuration: missing columns, unknown models, invalid params."""


class DataError(KitgenError):
    """Bad data: malformed files, unknown labels, empty inputs."""


class TransportError(KitgenError):
    """LLM/embedding endpoint failure after retries were exhausted."""
