"""Exception hierarchy shared by all prymcheck modules."""


class PrymcheckError(Exception):
    """Base class for every error raised by this package."""


# --- period matrices / theta evaluation ---

class NotSymmetric(PrymcheckError):
    pass


class NotPositiveDefinite(PrymcheckError):
    pass


class TargetTooSmall(PrymcheckError):
    pass


class DimensionMismatch(PrymcheckError):
    pass


class Overflow(PrymcheckError):
    pass


# --- data model / ingestion ---

class ParseError(PrymcheckError):
    pass


class SchemaError(PrymcheckError):
    pass


class ValidationError(PrymcheckError):
    pass


class GenusOutOfRange(PrymcheckError):
    pass


class UnknownPoint(PrymcheckError):
    pass


# --- condition solvers / search ---

class ZeroVector(PrymcheckError):
    pass


class DegenerateSystem(PrymcheckError):
    pass


class OnDivisor(PrymcheckError):
    pass


class EmptySamples(PrymcheckError):
    pass


class AllZero(PrymcheckError):
    pass


class NoConvergence(PrymcheckError):
    """Search failed to reach the target residual.

    Carries the best result found so that callers can still inspect it.
    """

    def __init__(self, message, best=None, trace=()):
        super().__init__(message)
        self.best = best
        self.trace = list(trace)


# --- divisor lab ---

class SamplingFailed(PrymcheckError):
    pass


class RootLost(PrymcheckError):
    pass


class NotSimple(PrymcheckError):
    pass


class AllTermsTiny(PrymcheckError):
    pass


class NoZeros(PrymcheckError):
    pass


# --- wave recursion ---

class NotPeriodic(PrymcheckError):
    pass


class DegenerateRoot(PrymcheckError):
    pass


# --- pseudo-differential calculus ---

class ZeroLeadingTerm(PrymcheckError):
    pass


class IncompatibleBase(PrymcheckError):
    pass


class WindowMiss(PrymcheckError):
    pass


class TruncationExhausted(PrymcheckError):
    pass


class InsufficientSamples(PrymcheckError):
    pass


# --- particle dynamics ---

class Collision(PrymcheckError):
    pass


class StepUnderflow(PrymcheckError):
    pass


# --- CLI ---

class UsageError(PrymcheckError):
    pass
