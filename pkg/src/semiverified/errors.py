"""Exception hierarchy shared by every module of the package."""


class SemiVerifiedError(Exception):
    """Base class for all errors raised by this package."""


class EmptySet(SemiVerifiedError):
    pass


class DimensionMismatch(SemiVerifiedError):
    pass


class NotSymmetric(SemiVerifiedError):
    pass


class RankRequest(SemiVerifiedError):
    pass


class DegenerateEigenvalue(SemiVerifiedError):
    """The p-th eigenvalue is numerically zero while the loop guard still fires."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class AllFiltered(SemiVerifiedError):
    pass


class InvalidAlpha(SemiVerifiedError):
    pass


class InvalidParams(SemiVerifiedError):
    pass


class InvalidSpec(SemiVerifiedError):
    pass


class InvalidQ(SemiVerifiedError):
    pass


class UnsupportedLoss(SemiVerifiedError):
    pass


class ConfigError(SemiVerifiedError):
    """Raised for malformed or invalid experiment configs.

    ``kind`` is ``"parse"`` for JSON syntax problems and ``"validation"`` for
    schema or invariant violations; ``field`` / ``line`` locate the problem.
    """

    def __init__(self, message, kind="validation", field=None, line=None):
        super().__init__(message)
        self.kind = kind
        self.field = field
        self.line = line

    def to_dict(self):
        return {
            "error": "ParseError" if self.kind == "parse" else "ValidationError",
            "message": str(self),
            "field": self.field,
            "line": self.line,
        }
