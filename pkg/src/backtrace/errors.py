"""Typed errors raised by the model format, the forward engine and the metrics."""


class BacktraceError(Exception):
    """Base class for all errors raised by this package."""


class MalformedManifest(BacktraceError):
    """Manifest bytes do not satisfy the pinned schema."""


class UnknownKind(BacktraceError):
    """Node kind is not part of the format."""


class ShapeMismatch(BacktraceError):
    """Declared or supplied tensor shapes are inconsistent."""


class DanglingEdge(BacktraceError):
    """Edge list references missing nodes, leaves nodes unreachable, or cycles."""


class WeightsOverrun(BacktraceError):
    """A parameter reference does not resolve inside the weights blob."""


class NonFiniteValue(BacktraceError):
    """A forward pass produced NaN or Inf; the message names the node."""


class IncompleteTrace(BacktraceError):
    """Relevance propagation was asked to run over a trace missing entries."""


class EmptyInput(BacktraceError):
    """An aggregation received no usable samples."""


class AllZeroAttribution(BacktraceError):
    """A metric that normalizes by total attribution mass received all zeros."""


class BatchForwardError(BacktraceError):
    """One or more samples in a batch failed; successful results are attached.

    Attributes:
        sample_errors: dict mapping failing sample index to the underlying error.
        results: dict mapping succeeding sample index to its (prediction, trace).
    """

    def __init__(self, sample_errors, results):
        self.sample_errors = dict(sample_errors)
        self.results = dict(results)
        indices = ", ".join(str(i) for i in sorted(self.sample_errors))
        first = next(iter(self.sample_errors.values()))
        super().__init__(f"forward failed for sample index {indices}: {first}")
