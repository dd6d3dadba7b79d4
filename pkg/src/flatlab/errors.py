"""Exception hierarchy shared by the geometry, flow and measure modules."""


class LabError(Exception):
    """Base class for every error raised by flatlab."""


class InvalidParameter(LabError, ValueError):
    pass


class InvalidSurface(LabError, ValueError):
    pass


class OutOfDomain(LabError, ValueError):
    pass


class NotApplicable(LabError, ValueError):
    pass


class ContractViolation(LabError, RuntimeError):
    pass


class ReductionFailure(LabError, RuntimeError):
    pass


class StiffnessFailure(LabError, RuntimeError):
    pass


class NotHyperbolic(LabError, ValueError):
    pass


class RefineFailure(LabError, RuntimeError):
    pass


class SizeLimit(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class ReportError(LabError, OSError):
    pass
