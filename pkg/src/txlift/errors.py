"""Exception hierarchy shared by every pipeline stage."""


class TxLiftError(Exception):
    """Base class for all errors raised by txlift."""


# ingestion
class MalformedTrace(TxLiftError):
    pass


class DepthDiscontinuity(MalformedTrace):
    pass


class UnknownOpcode(TxLiftError):
    pass


class InsufficientStack(TxLiftError):
    pass


# scope
class EmptyScope(TxLiftError):
    pass


# lifting
class UnboundValue(TxLiftError):
    pass


class LiftTimeout(TxLiftError):
    pass


# compression
class ShapeMismatch(TxLiftError):
    pass


# fund flow
class MalformedLog(TxLiftError):
    pass


class NoBeneficiary(TxLiftError):
    pass


# sketching
class MissingMeta(TxLiftError):
    pass


# refinement
class ProviderError(TxLiftError):
    pass


class ProviderRefusal(ProviderError):
    pass


class ProviderTimeout(ProviderError):
    pass


class MarkerMissing(TxLiftError):
    pass


class BudgetExhausted(TxLiftError):
    pass


class HarnessFailure(TxLiftError):
    pass


class NoErrorSite(TxLiftError):
    pass


class NoMatchInWindow(TxLiftError):
    pass


class AlignmentError(TxLiftError):
    pass


# rpc
class RpcUnavailable(TxLiftError):
    pass


class TxNotFound(TxLiftError):
    pass


class TraceUnsupported(TxLiftError):
    pass


class PipelineTimeout(TxLiftError):
    pass
