"""Exception types shared across the package."""


class CalreasonError(Exception):
    pass


class ParseError(CalreasonError, ValueError):
    """Raised for assessment text that does not conform to the canonical format.

    ``partial`` holds everything that could still be recovered, so reward
    code can score imperfect generations.
    """

    def __init__(self, message, line_no=None, line=None, partial=None):
        self.message = message
        self.line_no = line_no
        self.line = line
        self.partial = partial
        where = "end of text" if line_no is None else f"line {line_no}: {line!r}"
        super().__init__(f"{message} ({where})")

    @property
    def parsed_dimensions(self):
        if self.partial is None:
            return frozenset()
        return frozenset(self.partial.scores)


class SequenceTooLong(CalreasonError, ValueError):
    pass


class UnknownTokenId(CalreasonError, ValueError):
    pass


class InvariantViolation(CalreasonError, ValueError):
    pass


class OutOfRange(CalreasonError, ValueError):
    pass


class InvalidArgument(CalreasonError, ValueError):
    pass


class SchemaError(CalreasonError, ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        super().__init__(message if line_no is None else f"line {line_no}: {message}")


class VersionMismatch(CalreasonError, ValueError):
    pass


class ShapeMismatch(CalreasonError, ValueError):
    pass


class InvalidConfig(CalreasonError, ValueError):
    pass


class GroupTooSmall(CalreasonError, ValueError):
    pass


class JudgeUnavailable(CalreasonError, RuntimeError):
    pass


class JudgeResponseMalformed(CalreasonError, ValueError):
    pass


class LengthMismatch(CalreasonError, ValueError):
    pass


class EmptyTestSet(CalreasonError, ValueError):
    pass
