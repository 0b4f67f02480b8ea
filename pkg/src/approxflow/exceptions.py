"""Exception types raised by approxflow."""


class ApproxFlowError(Exception):
    """Base class for all library errors."""


class EmptyInputError(ApproxFlowError, ValueError):
    """The input path holds no records."""


class PipelineError(ApproxFlowError):
    """A transform failed while executing a chain.

    ``stage`` is the zero-based position of the op in the chain, or
    ``"load"`` when the failure concerns records as loaded.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class ChainTypeError(PipelineError, TypeError):
    """Final records are not ``(key, real)`` pairs."""


class InfeasibleTargetsError(ApproxFlowError):
    """Error-bound targets cannot be met even without sampling."""

    def __init__(self, percentile, predicted, target):
        super().__init__(
            f"target p{percentile:g} <= {target:g} is unreachable "
            f"(predicted {predicted:g} at rates (1, 1))"
        )
        self.percentile = percentile
        self.predicted = predicted
        self.target = target
