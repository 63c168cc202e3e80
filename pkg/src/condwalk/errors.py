"""Exception and warning types."""


class CondWalkError(Exception):
    """Base class for all library errors."""


class InvalidPoint(CondWalkError, ValueError):
    pass


class DimensionError(CondWalkError, ValueError):
    pass


class IllConditioned(CondWalkError, ValueError):
    pass


class InfiniteDelta(CondWalkError, ArithmeticError):
    """A pairing <phi, v> vanished (or underflowed), so delta is infinite."""

    def __init__(self, message="delta is infinite", where=None):
        super().__init__(message)
        self.where = where


class SingularAtom(CondWalkError, ValueError):
    pass


class WeightError(CondWalkError, ValueError):
    pass


class NotConverged(CondWalkError, RuntimeError):
    pass


class TooLarge(CondWalkError, ValueError):
    pass


class InfinitePerturbation(CondWalkError, ArithmeticError):
    pass


class MomentOverflow(CondWalkError, ArithmeticError):
    pass


class ConfigError(CondWalkError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = ""
        if field is not None:
            where += f" [field {field}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)
        self.message = message
        self.field = field
        self.line = line


class MissingRun(CondWalkError, FileNotFoundError):
    pass


class SchemaVersionError(CondWalkError, ValueError):
    """A JSON summary was written with an unsupported major schema version."""


class DiagnosticWarning(UserWarning):
    """An assumption of the underlying theory looks violated."""


class DegenerateVariance(DiagnosticWarning):
    pass


class ProximalityWarning(DiagnosticWarning):
    pass
