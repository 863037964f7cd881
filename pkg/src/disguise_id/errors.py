"""Exception types shared across the package."""


class DisguiseIdError(Exception):
    """Base class for all package errors."""


class ContractError(DisguiseIdError, ValueError):
    """An argument violates an operation's preconditions (shape, size, count)."""


class BoundsError(ContractError):
    """A rectangle or coordinate falls outside the image."""


class ParseError(DisguiseIdError, ValueError):
    """A manifest or config file is malformed."""


class CheckpointError(DisguiseIdError, ValueError):
    """A checkpoint file cannot be decoded."""


class SimilarityError(ContractError):
    """Two star-nets share too few valid angles to be compared."""


class TrainingDivergence(DisguiseIdError, RuntimeError):
    """Non-finite loss or gradient encountered during training."""
