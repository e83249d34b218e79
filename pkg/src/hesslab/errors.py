"""Exception hierarchy shared by all hesslab modules."""


class HesslabError(Exception):
    """Base class for every error raised by hesslab."""


class DomainError(HesslabError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class IllConditionedError(DomainError):
    """The input is so close to a boundary that the result is unreliable."""


class PreconditionError(HesslabError, ValueError):
    """A documented precondition failed; ``witness`` points at the offending data."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConvergenceError(HesslabError, RuntimeError):
    """An iterative solve did not reach its tolerance."""


class ConfigError(HesslabError, ValueError):
    """Invalid JSON configuration; ``path`` locates the bad entry."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
