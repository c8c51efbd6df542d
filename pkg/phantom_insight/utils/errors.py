class PhantomError(Exception):
    """Base class for all errors raised by phantom_insight."""

    exit_code = 1


class InvalidArgumentError(PhantomError, ValueError):
    pass


class OutOfRangeError(PhantomError, IndexError):
    pass


class CapacityError(PhantomError):
    pass


class FormatError(PhantomError, ValueError):
    exit_code = 3


class DataError(PhantomError):
    exit_code = 3


class ConfigError(PhantomError):
    exit_code = 2


class NumericalInstabilityError(PhantomError, ArithmeticError):
    exit_code = 4
