"""Exception hierarchy shared across the package.

Every error raised on purpose derives from BridgekitError so callers can
catch one base class. The CLI maps subclasses to exit codes: config and
usage problems exit 2, I/O problems exit 3, data inconsistencies exit 4.
"""


class BridgekitError(Exception):
    """Base class for all deliberate errors."""


class DomainError(BridgekitError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ContractError(BridgekitError, ValueError):
    """Inputs violate a structural precondition (shape, dtype, pairing)."""


class ConfigError(BridgekitError, ValueError):
    """A configuration file or value is malformed or unknown."""


class FormatError(BridgekitError, ValueError):
    """A serialized artifact does not follow its declared format."""


class TrainingError(BridgekitError, RuntimeError):
    """Training hit a non-recoverable numeric state."""


class DataMismatchError(BridgekitError, ValueError):
    """Dataset artifacts disagree with their manifest or with each other."""
