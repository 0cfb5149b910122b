"""Exception hierarchy shared across rmukit."""


class RMUKitError(Exception):
    """Base class for every error raised by rmukit."""


class ConfigurationError(RMUKitError, ValueError):
    """Operand shapes or settings do not conform."""


class InputError(RMUKitError, ValueError):
    """Input data is empty, missing a required field, or otherwise unusable."""


class IntegrityError(RMUKitError):
    """A trace, cache or optimizer state does not match the parameters it is used with."""


class UnsupportedSchemeError(ConfigurationError):
    pass


class DatasetError(InputError):
    """A dataset file failed to parse. The message names the file and line."""


class SchemaError(DatasetError):
    pass


class MetricsUndefinedError(InputError):
    """A correlation is undefined because one side is constant."""


class CheckpointError(RMUKitError):
    pass


class TrainingDivergence(RMUKitError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
