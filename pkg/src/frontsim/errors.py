"""Exception types shared across the package."""


class FrontsimError(Exception):
    """Base class for all package errors."""


class ParameterError(FrontsimError):
    """A parameter violates a documented precondition."""


class HorizonError(FrontsimError):
    """A query lies outside a simulated time horizon; we never extrapolate."""


class ConsistencyError(FrontsimError):
    """Two objects that must belong together (e.g. a front and the system
    it was built from) do not match."""


class EmptyLeftError(FrontsimError):
    """No particle occupies a site <= 0 at time zero, so the initial front
    position is undefined."""


class InsufficientDataError(FrontsimError):
    """Not enough samples to run the requested estimator or diagnostic."""


class PolicyError(FrontsimError):
    """A horizon policy cannot certify the requested check."""


class IntegrityError(FrontsimError):
    """Persisted output does not match its recorded content hash."""


class MergeError(FrontsimError):
    """Ensembles with incompatible manifests cannot be merged."""
