from enum import Enum


class MotionModel(Enum):
    """How the target moves across frames."""
    LINEAR_BOUNCE = "linear-bounce"
    SINUSOIDAL = "sinusoidal"
    RANDOM_WALK = "random-walk"


class Appearance(Enum):
    """How the target is rendered against the background."""
    SOLID_BLOB = "solid-blob"
    TEXTURED_BLOB = "textured-blob"
    INVERTED_MODALITY = "inverted-modality"


class WeakSupKind(Enum):
    """Form of the 0-1 weak supervision function."""
    IOU = "iou"
    NORMDIST = "normdist"

    @property
    def label(self) -> str:
        """Spelling used in weaklabels.txt."""
        return "dist" if self is WeakSupKind.NORMDIST else self.value

    @classmethod
    def parse(cls, value: str) -> "WeakSupKind":
        # weaklabels.txt writes the distance form as "dist"
        if value == "dist":
            return cls.NORMDIST
        return cls(value)


class SelectionMode(Enum):
    RANDOM = "random"
    QUALITY_ARGMAX = "quality-argmax"


class WorkerMode(Enum):
    RL = "RL"
    KD = "KD"


class FailureReason(Enum):
    """Enum to represent specific reasons a command fails; values are process exit codes."""
    CONFIG_ERROR = 2
    MISSING_INPUT = 3
    OUTPUT_EXISTS = 4
    TRAINING_DIVERGED = 5
    MALFORMED_CSV = 6
    DATASET_ERROR = 7
    UNEXPECTED_ERROR = 1


class Supervision(Enum):
    """Where the adaptation signal comes from."""
    WEAK = "weak"  # weak rewards + selected teacher
    GT = "gt"  # dense IoU + ground-truth oracle teacher


class WorkerSchedule(Enum):
    """Which objective each trainer worker optimizes."""
    COMBINED = "combined"  # S/2 RL + S/2 KD
    RL_ONLY = "rl-only"
    KD_ONLY = "kd-only"
