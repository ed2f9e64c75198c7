"""Exception types raised across the package."""


class RegistrationError(Exception):
    """Base class for all package errors."""


class InvalidArgument(RegistrationError, ValueError):
    pass


class DegenerateGeometry(RegistrationError):
    """Point configuration does not determine a unique rigid transform."""


class DegenerateConfidence(RegistrationError):
    """Soft correspondence cannot be turned into a sampling distribution."""


class DegenerateSampling(RegistrationError):
    """Not enough distinct mass in the sampling distribution to fill a group."""


class NoConsensus(RegistrationError):
    """Every candidate transform was discarded."""


class NonFiniteLoss(RegistrationError):
    pass
