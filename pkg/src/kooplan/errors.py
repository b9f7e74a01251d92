"""Exception types shared across the library."""


class DimensionMismatchError(ValueError):
    """Array shapes or state/input dimensions are inconsistent."""


class EmptyDatasetError(ValueError):
    """An operation received no data to work with."""


class InvalidInputError(ValueError):
    """Input contains NaN/Inf or violates a basic precondition."""


class DivergenceError(RuntimeError):
    """A rollout or integration produced non-finite values.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"diverged at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}")


class UnsupportedOperationError(TypeError):
    """Operation is not defined for this object (e.g. parameter gradients
    of a dictionary without trainable parameters)."""


class HorizonExceededError(ValueError):
    """A queried time lies outside the available prediction horizon."""


class ConditioningError(RuntimeError):
    """A matrix that must be SPD / well conditioned numerically is not."""


class SceneError(ValueError):
    """A scene or suite configuration file failed to parse or validate."""
