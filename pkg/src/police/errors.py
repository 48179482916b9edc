"""Exception hierarchy shared by every module."""


class PoliceError(Exception):
    pass


class DimensionError(PoliceError, ValueError):
    pass


class ConfigurationError(PoliceError, ValueError):
    pass


class ValidationError(PoliceError, ValueError):
    pass


class ContractError(PoliceError):
    """A documented precondition was violated (e.g. vertices with mixed signs)."""


class UnsupportedError(PoliceError):
    pass


class ParseError(PoliceError, ValueError):
    """Malformed file contents. ``path`` locates the offending element."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NonFiniteLossError(PoliceError, FloatingPointError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")
