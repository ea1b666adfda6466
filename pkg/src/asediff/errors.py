"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration: bad schedule rows, network dims, betas, etc."""


class ContractError(ValueError):
    """A caller violated an operation precondition (shapes, ranges)."""


class TrainingError(RuntimeError):
    """Training diverged.

    Attributes:
        step: iteration at which the non-finite loss was observed.
        history: loss values recorded up to that point.
    """

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = list(history or [])


class CatalogError(ConfigurationError):
    """Unknown schedule name."""


class MismatchError(ConfigurationError):
    """A schedule or checkpoint does not fit the network architecture."""
