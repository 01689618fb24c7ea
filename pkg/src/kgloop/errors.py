class KGLoopError(Exception):
    """Base class for errors raised by this package."""


class DataError(KGLoopError):
    """Input data is missing, inconsistent or refers to unknown symbols."""


class ParseError(DataError):
    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        elif lineno is not None:
            where = f"line {lineno}: "
        super().__init__(where + message)


class UndefinedScoreError(KGLoopError):
    """A rule has no body groundings or no head pairs, so SC/HC are undefined."""


class NumericError(KGLoopError):
    """Training produced a non-finite loss."""
