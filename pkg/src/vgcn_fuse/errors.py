"""Exception types shared across the package."""


class VgcnFuseError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(VgcnFuseError, ValueError):
    pass


class NoTape(VgcnFuseError, RuntimeError):
    """backward() was called on a tensor not produced under a recording tape."""


class EmptyVocabulary(VgcnFuseError, ValueError):
    pass


class InvalidDocument(VgcnFuseError, ValueError):
    pass


class CorpusFormatError(VgcnFuseError, ValueError):
    """A corpus line could not be parsed. Carries the 1-based line number."""

    def __init__(self, path, line: int, reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class UndefinedPair(VgcnFuseError, ValueError):
    """The two words never share a window, so NPMI is undefined."""


class EmptyClass(VgcnFuseError, ValueError):
    pass


class ConfigMismatch(VgcnFuseError, ValueError):
    pass


class MissingAttention(VgcnFuseError, ValueError):
    pass


class GraphMismatch(VgcnFuseError, ValueError):
    """Checkpoint was trained against a different graph or vocabulary file."""


class CheckpointVersionError(VgcnFuseError, ValueError):
    pass
