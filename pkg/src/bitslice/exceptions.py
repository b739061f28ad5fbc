"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRangeError(ValueError):
    """A layer has no nonzero weight, so its dynamic range is undefined."""


class FormatError(ValueError):
    """A data or checkpoint file does not match its expected binary layout."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
