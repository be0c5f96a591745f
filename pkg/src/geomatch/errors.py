"""Exception hierarchy shared by every module."""


class GeoMatchError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GeoMatchError, ValueError):
    pass


class SchemaError(GeoMatchError, ValueError):
    """A CSV or config document does not match its schema."""


class ConsistencyError(SchemaError):
    """Observed outcomes disagree with the stored potential outcomes."""


class DegenerateSplitError(GeoMatchError, ValueError):
    pass


class DisconnectedGraphError(GeoMatchError, ValueError):
    def __init__(self, message, component_sizes=()):
        super().__init__(message)
        self.component_sizes = tuple(component_sizes)


class SolverDivergedError(GeoMatchError, RuntimeError):
    def __init__(self, message, trace=(), pair=None):
        super().__init__(message)
        self.trace = list(trace)
        self.pair = pair
