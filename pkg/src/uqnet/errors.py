"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes disagree with a model or an uncertainty spec."""


class NonFiniteError(ValueError):
    """A model output or loss became NaN/inf."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training diverged: loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class TargetNotBracketedError(RuntimeError):
    """Training never crossed the target loss.

    Carries the lowest loss reached and the network whose loss was closest to
    the target, so callers can keep the member as nonconverged.
    """

    def __init__(self, target, min_loss, closest=None, closest_loss=None):
        super().__init__(
            f"target not bracketed: target loss {target:.6g}, minimum loss achieved {min_loss:.6g}"
        )
        self.target = target
        self.min_loss = min_loss
        self.closest = closest
        self.closest_loss = closest_loss


class EmptyNeighborhoodError(ValueError):
    def __init__(self, x):
        super().__init__(f"no testing samples inside the neighborhood of x={list(x)}")
        self.x = x


class EnsembleUnusableError(RuntimeError):
    pass
