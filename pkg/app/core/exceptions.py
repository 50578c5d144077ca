"""
Custom exception classes for the application.

Every failure raised by the numeric core, the models, the training engine, the
dataset layer and the command-line harness derives from AppBaseException, so the
CLI can turn any of them into a one-line diagnostic plus a JSON payload and the
inference API can turn them into a JSON response with the matching status code.
"""
from typing import Dict, Any, Optional


class AppBaseException(Exception):
    """
    Base exception class for all application-specific exceptions.

    Attributes:
        message: Human-readable error message
        details: Additional context about the error
        status_code: HTTP status code used by the inference API (default: 500)
    """

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None, status_code: int = 500):
        self.message = message
        self.details = details or {}
        self.status_code = status_code
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for JSON output."""
        return {
            "error": self.__class__.__name__,
            "message": self.message,
            **self.details
        }


class ShapeMismatchException(AppBaseException):
    """
    Raised when operand shapes do not conform to an operation.

    Details always name the operation and the offending shapes.
    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Shape mismatch", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class NonFiniteException(AppBaseException):
    """
    Raised when a NaN or Inf value enters or leaves a computation.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Non-finite value encountered", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class DetachedLossException(AppBaseException):
    """
    Raised when backward() is called on a value that is not on an active tape,
    or that has no trainable ancestry.

    HTTP Status: 500 Internal Server Error
    """

    def __init__(self, message: str = "Loss is detached from the tape", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=500)


class GradientCheckException(AppBaseException):
    """
    Raised when a gradient check cannot be performed (non-deterministic
    function, bad eps) or when its error exceeds the configured threshold.

    HTTP Status: 500 Internal Server Error
    """

    def __init__(self, message: str = "Gradient check failed", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=500)


class UnknownModalityException(AppBaseException):
    """
    Raised when a modality has no registered projection on a model, or is not
    declared by a dataset.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Unknown modality", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class VariantSpecException(AppBaseException):
    """
    Raised when an ablation variant id, its flags or its role assignment are
    inconsistent.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Invalid variant specification", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class DatasetValidationException(AppBaseException):
    """
    Raised when a dataset manifest or one of its frame files violates the
    dataset schema. Details carry the sample id and field when known.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Dataset validation failed", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class AlignmentException(AppBaseException):
    """
    Raised when an interval table or a frame stream cannot be aligned.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Alignment failed", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class CheckpointIntegrityException(AppBaseException):
    """
    Raised when a checkpoint manifest or blob is missing, truncated or does
    not match its recorded digest.

    HTTP Status: 500 Internal Server Error
    """

    def __init__(self, message: str = "Checkpoint is corrupted", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=500)


class TopologyMismatchException(AppBaseException):
    """
    Raised when a checkpoint's recorded topology does not fit the dataset or
    the request it is applied to.

    HTTP Status: 409 Conflict
    """

    def __init__(self, message: str = "Checkpoint topology does not match", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=409)


class TrainingDivergedException(AppBaseException):
    """
    Raised when the training objective becomes non-finite. Details carry the
    epoch and batch index.

    HTTP Status: 500 Internal Server Error
    """

    def __init__(self, message: str = "Training diverged", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=500)


class UndefinedMetricException(AppBaseException):
    """
    Raised when a metric is undefined for its input (empty input, constant
    series for a correlation, too few samples for a projection).

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Metric is undefined for this input", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class ConfigException(AppBaseException):
    """
    Raised when a configuration file or an override fails validation.

    HTTP Status: 400 Bad Request
    """

    def __init__(self, message: str = "Invalid configuration", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=400)


class ModelNotLoadedException(AppBaseException):
    """
    Raised when the inference API is asked to predict before a checkpoint
    has been loaded.

    HTTP Status: 503 Service Unavailable
    """

    def __init__(self, message: str = "Model is not loaded yet. Please try again later.", details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, status_code=503)
