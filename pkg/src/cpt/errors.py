"""Exception hierarchy shared across the package."""


class CPTError(Exception):
    """Base class for every error raised by this package."""


class InputError(CPTError, ValueError):
    pass


class ConfigurationError(CPTError, ValueError):
    pass


class DataError(CPTError, ValueError):
    pass


class ParseError(InputError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ConsistencyError(DataError):
    pass


class NumericalError(CPTError, ArithmeticError):
    pass
