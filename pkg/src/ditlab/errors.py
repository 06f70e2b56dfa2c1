"""Exception taxonomy shared by every ditlab module."""


class DitlabError(Exception):
    """Base class so callers can catch everything from this package at once."""


class ShapeError(DitlabError, ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(DitlabError, ValueError):
    """Numeric argument outside its permitted range (e.g. t outside [0, 1])."""


class ConfigError(DitlabError, ValueError):
    """Invalid or inconsistent run configuration."""


class ContractError(DitlabError, RuntimeError):
    """API misuse: non-scalar backward root, double backward, unfrozen teacher."""


class NumericError(DitlabError, ArithmeticError):
    """NaN/Inf encountered where the contract requires finite values."""


class FormatError(DitlabError, ValueError):
    """On-disk artifact (checkpoint, config) is malformed or truncated."""


class TrainingDivergence(UserWarning):
    """Loss failed to decrease where a sane run should make progress."""
