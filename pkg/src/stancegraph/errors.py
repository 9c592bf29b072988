"""Exception hierarchy shared by every stancegraph module."""


class StanceGraphError(Exception):
    """Base class. ``line`` is set when the error was raised while reading a file."""

    def __init__(self, message: str = "", line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# graph construction / ingestion
class DuplicateId(StanceGraphError):
    pass


class SchemaMismatch(StanceGraphError):
    pass


class UnknownEndpoint(StanceGraphError):
    pass


class UnknownNode(StanceGraphError):
    pass


class KindTypingViolation(StanceGraphError):
    pass


class MissingTimestamp(StanceGraphError):
    pass


class IllegalStance(StanceGraphError):
    pass


class DuplicateEdge(StanceGraphError):
    pass


class GraphFrozen(StanceGraphError):
    pass


class ParseError(StanceGraphError):
    pass


# stance / paths
class EmptyTopic(StanceGraphError):
    pass


class ProviderError(StanceGraphError):
    pass


class UnlabeledStance(StanceGraphError):
    pass


# numerics
class ShapeMismatch(StanceGraphError):
    pass


class NoForwardRecorded(StanceGraphError):
    pass


# training / evaluation
class TooFewEdges(StanceGraphError):
    pass


class DegenerateTimestamps(StanceGraphError):
    pass


class NotEnoughNegatives(StanceGraphError):
    pass


class SingleClass(StanceGraphError):
    pass


class ConfigInvalid(StanceGraphError):
    pass


class CheckpointMismatch(StanceGraphError):
    pass


def at_line(err: StanceGraphError, line: int) -> StanceGraphError:
    """Re-create ``err`` with a line number attached (same class)."""
    msg = str(err)
    new = type(err)(msg, line=line)
    return new
