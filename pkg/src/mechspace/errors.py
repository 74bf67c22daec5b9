"""Exception hierarchy shared across the package."""


class MechspaceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MechspaceError, ValueError):
    """Invalid configuration, shape or hyperparameter."""


class ValidationError(ConfigurationError):
    """Manifest validation failure; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyInputError(MechspaceError, ValueError):
    pass


class IntegrationError(MechspaceError, ArithmeticError):
    """Non-finite or divergent state during time integration."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class NumericError(MechspaceError, ArithmeticError):
    pass


class SingularityError(NumericError):
    pass


class UsageError(MechspaceError, RuntimeError):
    pass


class DegenerateSetError(MechspaceError, ValueError):
    pass


class ProtocolViolationError(MechspaceError, RuntimeError):
    """Variants in a paired comparison did not see identical data."""


class TrainingAbortedError(NumericError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
