"""Exception types raised by spinereg."""


class RegistrationError(Exception):
    """Base class for all spinereg errors."""


class ConstantVolume(RegistrationError, ValueError):
    pass


class GridMismatch(RegistrationError, ValueError):
    pass


class UnknownBody(RegistrationError, KeyError):
    pass


class EmptyBody(RegistrationError, ValueError):
    pass


class DegenerateGeometry(RegistrationError, ValueError):
    """Point set too small or collinear for a unique rigid fit."""

    def __init__(self, message, body=None):
        super().__init__(message)
        self.body = body


class NonFiniteLoss(RegistrationError, FloatingPointError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class BodiesOverlapAfterMotion(RegistrationError, ValueError):
    pass


class AllFolded(RegistrationError, ValueError):
    pass


class MetaImageError(RegistrationError, ValueError):
    pass
