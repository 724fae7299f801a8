class MixCycleError(Exception):
    """Base class for toolkit errors."""


class ConfigError(MixCycleError):
    """Bad configuration: unknown key, out-of-range value, unusable setup."""


class DataError(MixCycleError):
    """Input data could not be read or is malformed."""


class LoadError(DataError):
    def __init__(self, path, reason="cannot read file"):
        self.path = str(path)
        super().__init__(f"{reason}: {self.path}")


class ParseError(DataError):
    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {reason}")
