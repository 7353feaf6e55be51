"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class LdwError(Exception):
    """Base class for all errors raised by ldwpdm."""

    module = "ldwpdm"


# gmm
class SingularCovariance(LdwError):
    module = "gmm"


class EmptyData(LdwError):
    module = "gmm"


class InsufficientData(LdwError):
    module = "gmm"


class DegenerateComponent(LdwError):
    module = "gmm"


# hmm
class SequenceTooShort(LdwError):
    module = "hmm"


class NumericalUnderflow(LdwError):
    module = "hmm"


# predictor
class InvalidRequest(LdwError):
    module = "predictor"


class LengthMismatch(LdwError):
    module = "predictor"


# warning
class InvalidGeometry(LdwError):
    module = "warning"


class HorizonMismatch(LdwError):
    module = "warning"


class DuplicateName(LdwError):
    module = "warning"


# dataio
class ParseError(LdwError):
    module = "dataio"

    def __init__(self, line: int, column: str | None, reason: str, source: str | None = None):
        self.line = line
        self.column = column
        self.reason = reason
        self.source = source
        where = f"{source}:" if source else ""
        col = f" column {column!r}" if column else ""
        super().__init__(f"{where}line {line}{col}: {reason}")


class NonMonotonicTime(ParseError):
    pass


class TooFewEvents(LdwError):
    module = "dataio"


# synth
class InvalidProfile(LdwError):
    module = "synth"


class IoFailure(LdwError):
    module = "synth"


# eval
class ZeroTotal(LdwError):
    module = "eval"


class NoWarnings(LdwError):
    module = "eval"
