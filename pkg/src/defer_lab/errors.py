"""Exception hierarchy shared across the package."""


class DeferLabError(Exception):
    """Base class for every error raised by defer_lab."""


class InvalidInputError(DeferLabError, ValueError):
    pass


class InvalidDimensionError(InvalidInputError):
    pass


class EstimatorOverflowError(DeferLabError, ArithmeticError):
    """The symmetric-softmax estimator hit a zero denominator."""


class BoundaryError(DeferLabError, ValueError):
    """Expert accuracy of exactly 0 or 1; the surrogate minimizer is at infinity."""


class ConvergenceError(DeferLabError, RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


class DivergedError(DeferLabError, RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigError(DeferLabError, ValueError):
    pass


class DatasetError(DeferLabError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + message)
        self.row = row
