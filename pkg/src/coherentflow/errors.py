"""Exception types shared across the toolkit."""


class CoherentFlowError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CoherentFlowError, ValueError):
    """Invalid argument, configuration value, or data invariant violation."""


class FormatError(CoherentFlowError, ValueError):
    """Malformed file content (bad magic, bad header, trailing garbage)."""


class FlowIOError(CoherentFlowError, IOError):
    """Truncated or unreadable flow payload."""
