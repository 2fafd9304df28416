class XnnError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(XnnError, ValueError):
    pass


class ShapeError(XnnError, ValueError):
    pass


class DegenerateError(XnnError, ValueError):
    pass


class NumericError(XnnError, ArithmeticError):
    pass
