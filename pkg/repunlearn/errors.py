"""Exception hierarchy shared by every repunlearn module"""


class RepUnlearnError(Exception):
    """Base class for all errors raised by repunlearn"""
    pass


class NumericsError(RepUnlearnError):
    """Raised on invalid numerical input (shape mismatch, non-finite values, bad scale)"""
    pass


class UnsupportedOperationError(NumericsError):
    """Raised when a composition uses an operation with no analytic backward pass"""
    pass


class DatasetError(RepUnlearnError):
    """Raised on invalid datasets, splits or class-count metadata"""
    pass


class TrainingDivergedError(RepUnlearnError):
    """Raised when classifier training produces a non-finite loss"""
    pass


class UnlearningError(RepUnlearnError):
    """Raised when a transformation or an unlearning run is invalid or diverges"""
    pass


class BoundsError(RepUnlearnError):
    """Raised on degenerate channels in the bound-certification lab"""
    pass


class EvaluationError(RepUnlearnError):
    """Raised when a metric is asked to evaluate an empty or inconsistent input"""
    pass


class StorageError(RepUnlearnError):
    """Raised when an artifact cannot be read, parsed or written"""
    pass


class StageError(RepUnlearnError):
    """Raised by the experiment harness with the name of the failing stage"""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class FigureError(RepUnlearnError):
    """Raised when a figure cannot be drawn for the given inputs"""
    pass
