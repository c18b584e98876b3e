"""Exception hierarchy shared by the solvers and the command line."""


class EffMasterError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(EffMasterError, ValueError):
    pass


class UnsupportedConfiguration(EffMasterError):
    pass


class ConsistencyError(EffMasterError):
    """An assembled object failed an internal self-check."""


class NumericalError(EffMasterError):
    pass


class IntegrationError(NumericalError):
    pass


class DegenerateSteadyState(NumericalError):
    pass


class ResourceLimit(EffMasterError):
    pass


class TrajectoryAbort(NumericalError):
    pass


class EnsembleFailure(NumericalError):
    pass
