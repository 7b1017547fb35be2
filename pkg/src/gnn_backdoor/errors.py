"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the CLI can map failures of each
class to a distinct process status.
"""


class BackdoorError(Exception):
    exit_code = 1


class ArgumentError(BackdoorError, ValueError):
    exit_code = 2


class IngestionError(BackdoorError):
    exit_code = 3


class MalformedDatasetError(IngestionError):
    exit_code = 4


class ShapeError(BackdoorError, ValueError):
    exit_code = 5


class DegenerateInputError(BackdoorError, ValueError):
    exit_code = 6


class TrainingDivergedError(BackdoorError):
    exit_code = 7

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ExplainerDivergedError(BackdoorError):
    exit_code = 8


class InsufficientSamplesError(BackdoorError):
    exit_code = 9


class SkipItem(BackdoorError):
    """Signal that an item cannot host the trigger and is excluded."""

    exit_code = 10


class PoisoningFailedError(BackdoorError):
    exit_code = 11


class EvaluationImpossibleError(BackdoorError):
    exit_code = 12


class CheckpointVersionError(BackdoorError):
    exit_code = 13


class SchemaError(BackdoorError):
    exit_code = 14


class EmptyInputError(BackdoorError):
    exit_code = 15


class PhaseError(BackdoorError):
    """Wraps an error raised inside one experiment phase."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1) + 20 * (1 + PHASES.index(phase))


PHASES = ("load", "train_clean", "explain", "poison", "train_backdoor", "evaluate", "report")
