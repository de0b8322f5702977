"""Exception hierarchy shared across the engine.

Every error carries a short machine-readable ``category`` so the CLI can
emit ``error:<category>:`` prefixes and pick exit codes without string
matching on messages.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class InvalidArgumentError(EngineError):
    """A caller violated a documented precondition."""

    category = "args"


class NumericError(EngineError):
    """Numerically degenerate input or a NaN produced mid-computation."""

    category = "numeric"


class DegenerateInputError(NumericError):
    """Zero-variance / undefined statistic; callers usually treat as 0."""

    category = "numeric"


class ParseError(EngineError):
    """Malformed file content (PLY, PFM, pose file, ...)."""

    category = "parse"


class ValidationError(EngineError):
    """Structurally parseable input that violates bundle/view invariants."""

    category = "validation"


class ConfigError(EngineError):
    """Bad key or value in a config file."""

    category = "config"
