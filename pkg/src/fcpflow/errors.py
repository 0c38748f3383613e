"""Exception hierarchy shared by all fcpflow modules."""


class FCPFlowError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FCPFlowError, ValueError):
    pass


class DomainError(FCPFlowError, ValueError):
    pass


class ContractError(FCPFlowError, ValueError):
    pass


class NumericError(FCPFlowError, ArithmeticError):
    pass


class EvaluationError(FCPFlowError, ArithmeticError):
    pass


class StateError(FCPFlowError, RuntimeError):
    pass


class ConfigurationError(FCPFlowError, ValueError):
    pass


class CheckpointError(FCPFlowError, ValueError):
    """Raised when a checkpoint file is unreadable, truncated or malformed."""


class ParseError(FCPFlowError, ValueError):
    pass


class ScaleError(FCPFlowError, ValueError):
    pass


class SpecError(FCPFlowError, ValueError):
    pass


class UndefinedMetricError(FCPFlowError, ValueError):
    pass


class BandwidthError(FCPFlowError, ValueError):
    pass


class TrainingError(NumericError):
    """Non-finite loss during training.

    ``model`` holds the model restored to the last finite parameter state.
    """

    def __init__(self, message, model=None, epoch=None, batch=None):
        super().__init__(message)
        self.model = model
        self.epoch = epoch
        self.batch = batch
