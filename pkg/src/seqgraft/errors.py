"""Exception types shared across the toolkit."""


class SeqgraftError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SeqgraftError):
    """Tensor shapes do not conform to the requested operation."""


class NumericError(SeqgraftError):
    """Non-finite values encountered while strict-finite checking is on."""


class ContractError(SeqgraftError):
    """A caller violated an operation's preconditions."""


class StateError(SeqgraftError):
    """An object was used in a state that does not permit the operation."""


class ConfigError(SeqgraftError):
    """A configuration value violates its constraints."""


class DegenerateBatchError(SeqgraftError):
    """A batch contains no usable (non-padding) tokens."""


class TrainingDiverged(SeqgraftError):
    """Validation loss blew past the divergence threshold repeatedly."""
