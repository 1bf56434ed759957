"""Exception hierarchy shared by all spikekit modules."""


class SpikekitError(Exception):
    """Base class for all spikekit errors."""


class ShapeMismatchError(SpikekitError):
    """Operand shapes do not conform for the requested operation."""


class ConfigurationError(SpikekitError):
    """A structural or hyperparameter configuration is invalid."""


class DomainError(SpikekitError):
    """A numeric argument is outside its mathematical domain."""


class ValidationError(SpikekitError):
    """A model graph violates one of its structural invariants."""


class ModelFormatError(SpikekitError):
    """A model manifest or weight blob on disk is malformed."""


class DataFormatError(SpikekitError):
    """A dataset file is malformed or has an unknown magic."""
