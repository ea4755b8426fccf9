from typing import Any, Dict, Optional, Type, ClassVar
from enum import Enum
import traceback
import sys

# Codes shared by every component; EXIT_CODES groups them for the CLI
class ErrorCode(Enum):
    GENERAL_ERROR = "GEN001"
    CONFIGURATION_ERROR = "CFG001"
    INPUT_ERROR = "ING001"
    DOMAIN_ERROR = "DOM001"
    PRECONDITION_ERROR = "PRE001"
    NUMERIC_ERROR = "NUM001"
    MODEL_FORMAT_ERROR = "MDL001"
    FILE_OPERATION_ERROR = "FOE001"


EXIT_CODES: Dict[ErrorCode, int] = {
    ErrorCode.INPUT_ERROR: 2,
    ErrorCode.FILE_OPERATION_ERROR: 2,
    ErrorCode.MODEL_FORMAT_ERROR: 2,
    ErrorCode.NUMERIC_ERROR: 3,
    ErrorCode.CONFIGURATION_ERROR: 4,
    ErrorCode.PRECONDITION_ERROR: 5,
    ErrorCode.DOMAIN_ERROR: 5,
}


class BaseCustomException(Exception):
    """
    Root of the error hierarchy.

    ``data`` carries structured context (line numbers, sections, seeds) that the
    CLI logs as JSON fields next to the message.
    """
    default_code: ClassVar[ErrorCode] = ErrorCode.GENERAL_ERROR

    def __init__(self, message: str, code: Optional[ErrorCode] = None, data: Optional[Dict[str, Any]] = None):
        self.message = message
        self.code = code or self.default_code
        self.data = data or {}
        self.traceback = "".join(traceback.format_exception(*sys.exc_info())) if sys.exc_info()[0] else ""
        super().__init__(self.message)

    def __str__(self) -> str:
        error_info = f"[{self.code.value}] {self.message}"
        if self.data:
            error_info += f" - Data: {self.data}"
        return error_info

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.code, 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.__class__.__name__,
            "code": self.code.value,
            "message": self.message,
            "data": self.data,
            "traceback": self.traceback
        }

    @classmethod
    def from_dict(cls: Type['BaseCustomException'], data: Dict[str, Any]) -> 'BaseCustomException':
        code = ErrorCode(data.get('code', cls.default_code.value))
        return cls(
            message=data.get('message', 'Unknown error'),
            code=code,
            data=data.get('data', {})
        )


class ConfigurationError(BaseCustomException):
    """Raised for run configurations that cannot be used as given."""
    default_code = ErrorCode.CONFIGURATION_ERROR

class PriceDataError(BaseCustomException):
    """Raised when price files cannot be ingested."""
    default_code = ErrorCode.INPUT_ERROR

class DomainError(BaseCustomException):
    """Raised for arguments outside a function's domain, such as SoC beyond [0, E]."""
    default_code = ErrorCode.DOMAIN_ERROR

class PreconditionError(BaseCustomException):
    """Raised when an input violates a documented precondition."""
    default_code = ErrorCode.PRECONDITION_ERROR

class InsufficientHistoryError(PreconditionError):
    """Raised when a feature vector needs more price history than exists."""

    def __init__(self, message: str, first_valid_t: int, data: Optional[Dict[str, Any]] = None):
        self.first_valid_t = first_valid_t
        super().__init__(message, data={"first_valid_t": first_valid_t, **(data or {})})

class DimensionMismatchError(PreconditionError):
    """Raised when array shapes disagree with a model or feature spec."""

class NumericError(BaseCustomException):
    """Raised when NaN or Inf values reach a numerical routine."""
    default_code = ErrorCode.NUMERIC_ERROR

class TrainingDivergedError(NumericError):
    """Raised when the training loss stops being finite."""

    def __init__(self, message: str, epoch: int, seed: int):
        self.epoch = epoch
        self.seed = seed
        super().__init__(message, data={"epoch": epoch, "seed": seed})

class ModelFormatError(BaseCustomException):
    """Raised when a model or value-function file cannot be decoded."""
    default_code = ErrorCode.MODEL_FORMAT_ERROR

    def __init__(self, message: str, section: str):
        self.section = section
        super().__init__(message, data={"section": section})

class FileOperationError(BaseCustomException):
    """Raised when an input is missing or an output cannot be written."""
    default_code = ErrorCode.FILE_OPERATION_ERROR
