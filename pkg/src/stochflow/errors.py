"""Exception hierarchy shared by all modules."""


class StochflowError(Exception):
    pass


class DomainError(StochflowError, ValueError):
    """Inputs outside the mathematical domain of an operation."""


class DataError(StochflowError, ValueError):
    """Malformed sampled data (NaN, empty windows, shape mismatch)."""


class CapabilityError(StochflowError, TypeError):
    """A field lacks a capability the operation needs (e.g. a gradient)."""


class CFLError(StochflowError, ValueError):
    def __init__(self, message, required_dt):
        super().__init__(message)
        self.required_dt = required_dt


class DriftEvaluationError(StochflowError, FloatingPointError):
    def __init__(self, message, step, time, index):
        super().__init__(message)
        self.step = step
        self.time = time
        self.index = index


class ConfigError(StochflowError, ValueError):
    pass


class ViewError(StochflowError, KeyError):
    pass
