class TridentError(Exception):
    """A runtime failure; the command line reports it and exits with 2."""


class ConfigurationError(TridentError):
    """
    The run configuration (file or flags) is invalid. Raised before any
    side effect takes place.
    """


class ManifestError(TridentError):
    def __init__(self, message, path=None, line_no=None):
        self.path = path
        self.line_no = line_no
        where = ''
        if path is not None:
            where += f'{path}'
        if line_no is not None:
            where += f':{line_no}'
        super().__init__(f'{where}: {message}' if where else message)


class ShapeError(TridentError):
    def __init__(self, expected, actual, what='input'):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f'{what} shape mismatch: expected {self.expected}, got {self.actual}')


class WeightFileError(TridentError):
    pass


class CalibrationError(TridentError):
    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message)
