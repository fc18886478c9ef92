"""Engine exceptions — every failure a run can report, rooted at ``EngineError``."""


class EngineError(Exception):
    """Base class for all engine failures."""


class DomainError(EngineError, ValueError):
    """Raised when a special function is evaluated outside its domain."""

    def __init__(self, function: str, value: float):
        self.function = function
        self.value = value
        super().__init__(f"{function} is undefined at x={value!r} (requires x > 0)")


class NonFiniteScoreError(EngineError, FloatingPointError):
    """Raised when an assignment score overflows."""

    def __init__(self, component: int, term: str):
        self.component = component
        self.term = term
        super().__init__(f"Non-finite score for component {component} in term '{term}'")


class InvalidProblemError(EngineError, ValueError):
    """Raised for a restricted update that violates C > 0 or 2 <= K' <= K."""


class ContractViolation(EngineError, ValueError):
    """Raised when an operation receives inputs outside its precondition."""


class InvalidStateError(EngineError, ValueError):
    """Raised when variational parameters leave their valid domain."""


class BookkeepingError(EngineError):
    """Raised when incremental updates push a parameter below its prior floor."""

    def __init__(self, parameter: str, index: int, value: float, floor: float):
        self.parameter = parameter
        self.index = index
        self.value = value
        self.floor = floor
        super().__init__(
            f"Corrupted assignment bookkeeping: {parameter}[{index}]={value!r} "
            f"fell below its prior floor {floor!r}"
        )


class ElboRegressionError(EngineError):
    """Raised in strict runs when the ELBO decreases beyond the allowed slack."""

    def __init__(self, before: float, after: float, where: str = ""):
        self.before = before
        self.after = after
        self.where = where
        suffix = f" after {where}" if where else ""
        super().__init__(f"ELBO decreased from {before!r} to {after!r}{suffix}")


class CensusError(EngineError):
    """Raised when a parameter column is lost or duplicated in circulation."""

    def __init__(self, missing: list[int], duplicated: list[int]):
        self.missing = missing
        self.duplicated = duplicated
        super().__init__(
            f"Token census failed — missing columns: {missing}, duplicated columns: {duplicated}"
        )


class CorpusParseError(EngineError, ValueError):
    """Raised for a malformed corpus file: UCI bag-of-words or dense rows."""

    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")
