"""Exception hierarchy shared by all modules."""

import numpy as np


class CarlemanError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidInput(CarlemanError, ValueError):
    pass


class DegenerateMetric(CarlemanError):
    """Metric not symmetric positive definite at some point."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = None if location is None else np.asarray(location, dtype=float)


class ZeroGradient(CarlemanError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = None if location is None else np.asarray(location, dtype=float)


class SearchExhausted(CarlemanError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class WeightOverflow(CarlemanError):
    pass


class PlateauNotFound(CarlemanError):
    def __init__(self, message, max_ratios=()):
        super().__init__(message)
        self.max_ratios = list(max_ratios)


class NonConvergence(CarlemanError):
    def __init__(self, message, residual_trace=()):
        super().__init__(message)
        self.residual_trace = list(residual_trace)


class DegenerateSolution(CarlemanError):
    pass


class ExpressionError(InvalidInput):
    """Malformed expression string; ``position`` is the 0-based column."""

    def __init__(self, message, text="", position=None):
        if position is not None:
            message = f"{message} at column {position + 1} in {text!r}"
        super().__init__(message)
        self.text = text
        self.position = position
