"""
Exceptions thrown by flowmap.
"""


class FlowMapException(Exception):
    """
    Base exception for flowmap.

    It is re-raised by the pipeline runner if any step that is executing raises it, and converted into a
    single-line command error by the management commands.

    Arguments:
        message (str): message describing why the exception was raised.
        keyword arguments (kwargs): extra context attached to the exception, e.g. the offending path or key.
    """

    code = "flowmap_error"

    def __init__(self, message="", **kwargs):
        """
        Init method for FlowMapException.

        It's designed to allow flexible instantiation through **kwargs.
        """
        super().__init__()
        self.message = message
        for key, value in kwargs.items():
            setattr(self, key, value)

    def __str__(self):
        """
        Show string representation of FlowMapException using its message.
        """
        return self.message


class ConfigError(FlowMapException):
    code = "config_error"


class DatasetError(FlowMapException):
    code = "dataset_error"


class RasterStackError(FlowMapException):
    code = "raster_error"


class MissingLayer(RasterStackError):
    code = "missing_layer"


class DimensionMismatch(RasterStackError):
    code = "dimension_mismatch"


class NonFiniteValues(RasterStackError):
    code = "non_finite_values"


class WindowOutOfBounds(RasterStackError):
    code = "window_out_of_bounds"


class SeriesError(FlowMapException):
    code = "series_error"


class SeriesParseError(SeriesError):
    code = "series_parse_error"


class InterpolationError(SeriesError):
    code = "interpolation_error"


class HistoryUnavailable(SeriesError):
    code = "insufficient_history"


class SamplingError(FlowMapException):
    code = "sampling_error"


class ModelError(FlowMapException):
    code = "model_error"


class ModelConfigError(ModelError):
    code = "model_config_error"


class ModelInputError(ModelError):
    code = "model_input_error"


class LossError(FlowMapException):
    code = "loss_error"


class TrainingError(FlowMapException):
    code = "training_error"


class NonFiniteLoss(TrainingError):
    """
    Raised when the training loss stops being finite.

    Arguments:
        step (int): optimization step at which the loss was observed.
        checkpoint (str): path of the diagnostic checkpoint written before aborting.
    """

    code = "non_finite_loss"


class BaselineInputMissing(FlowMapException):
    code = "baseline_input_missing"


class EvaluationError(FlowMapException):
    code = "evaluation_error"
