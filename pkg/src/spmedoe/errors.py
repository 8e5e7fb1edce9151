"""Exception types raised across the package."""


class SpmeDoeError(Exception):
    """Base class for all package errors."""


class ConfigError(SpmeDoeError):
    """Invalid configuration. ``issues`` lists every failed check."""

    def __init__(self, issues, path=None):
        if isinstance(issues, str):
            issues = [issues]
        self.issues = list(issues)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.issues))


class ModelError(SpmeDoeError):
    """Base for errors raised while evaluating the cell models."""

    def __init__(self, message, time=None):
        self.time = time
        if time is not None:
            message = f"{message} (t = {time:g} s)"
        super().__init__(message)


class DomainError(ModelError, ValueError):
    """Function argument outside its mathematical domain."""


class SingularityError(ModelError):
    """Evaluation too close to a pole or log/sqrt singularity."""


class SaturationError(ModelError):
    """Surface concentration left the open interval (0, c_max)."""

    def __init__(self, message, value=None, time=None):
        self.value = value
        super().__init__(message, time=time)


class ModelValidityError(ModelError):
    """A constitutive law produced a non-physical value."""


class NumericalError(SpmeDoeError):
    """Integrator / Newton failure. ``step`` is the failing sample index."""

    def __init__(self, message, step=None, trace=None):
        self.step = step
        self.trace = trace or []
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class InfeasibleError(SpmeDoeError):
    """The initial state already violates the design constraints."""


class NoninformativeError(SpmeDoeError):
    """Fisher matrix is identically zero."""


class SafetyViolation(ModelError):
    """Plant voltage left the safety window while applying an input."""
