"""Exception hierarchy for qhet."""


class QhetError(Exception):
    """Base class for all library errors."""


class DomainError(QhetError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class InsufficientStudiesError(DomainError):
    """Fewer than two studies were supplied."""


class DegenerateStudyError(DomainError):
    """A study cannot produce an effect estimate (e.g. zero pooled SD)."""


class UsageError(QhetError, ValueError):
    """An invalid combination of options, such as a method/null pairing."""


class NumericError(QhetError, ArithmeticError):
    """A numerical routine failed; ``diagnostics`` carries what is known."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConvergenceError(NumericError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, last=None, iterations=None, **diagnostics):
        super().__init__(message, last=last, iterations=iterations, **diagnostics)
        self.last = last
        self.iterations = iterations
