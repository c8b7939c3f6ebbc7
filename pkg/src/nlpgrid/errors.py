"""Exception hierarchy shared by all nlpgrid modules."""


class NlpGridError(Exception):
    """Base class for all toolkit errors."""


# --- spec language ---

class MalformedXml(NlpGridError):
    pass


class SchemaViolation(NlpGridError):
    pass


class DanglingReference(NlpGridError):
    pass


class CyclicPipeline(NlpGridError):
    pass


class UnboundVariable(NlpGridError):
    pass


class IllegalReference(NlpGridError):
    pass


# --- registry / harvesting ---

class InvariantViolation(NlpGridError):
    pass


class NotFound(NlpGridError):
    pass


class EndpointUnreachable(NlpGridError):
    pass


class ProtocolError(NlpGridError):
    pass


class PartialHarvest(NlpGridError):
    """Mid-stream harvest failure; already-upserted records remain.

    Carries the incomplete HarvestReport as `report`.
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class BadVerb(NlpGridError):
    pass


class BadToken(NlpGridError):
    pass


# --- resolver ---

class SourceArityMismatch(NlpGridError):
    pass


class NoConversionPath(NlpGridError):
    def __init__(self, edge, produced, required):
        super().__init__(
            "no conversion path %s -> %s for edge %s" % (produced, required, (edge,))
        )
        self.edge = edge
        self.produced = produced
        self.required = required


class RecursiveAggregation(NlpGridError):
    pass


class SpliceTypeMismatch(NlpGridError):
    pass


# --- broker ---

class UnknownSize(NlpGridError):
    pass


class NonPositiveChunk(NlpGridError):
    pass


class MissingLink(NlpGridError):
    pass


class SchedulingError(NlpGridError):
    """Base for planning failures; carries the best partial schedule."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoFeasibleNode(SchedulingError):
    pass


class DeadlineInfeasible(SchedulingError):
    pass


class BudgetExceeded(SchedulingError):
    pass


# --- simulator ---

class NoRetryTarget(NlpGridError):
    pass


class StubMissing(NlpGridError):
    pass
