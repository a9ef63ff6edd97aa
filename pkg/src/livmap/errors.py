"""Exception types shared across the pipeline."""


class LivmapError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LivmapError):
    """Bad inputs: malformed files, violated invariants, incompatible shapes."""


class PipelineError(LivmapError):
    """Runtime failure inside an otherwise valid run."""


class UndefinedResultError(PipelineError):
    """A metric has no defined value for the given data (e.g. all-tied tau_b)."""


class TrainingDiverged(PipelineError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss
