"""Operational errors surfaced to callers and the command line."""


class AnalysisError(Exception):
    """Base class; ``code`` is the stable machine-readable error name."""

    code = "error"


class InvalidInputError(AnalysisError, ValueError):
    code = "invalid_input"


class RpcError(AnalysisError):
    code = "rpc_error"


class EmptyCodeError(AnalysisError):
    code = "empty_code"
