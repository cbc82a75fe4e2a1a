"""Scripted teacher trackers, their quality estimate on a video, and per-video teacher selection."""

import logging
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np

import config
from data.models import SelectionMode
from data.synthworld import Video
from tracking.geometry import BBox, validate_box

logger = logging.getLogger(__name__)


class WeakSupervisionUndefinedError(ValueError):
    """Raised when weak supervision is defined on none of the frames being scored."""


@dataclass(frozen=True)
class TeacherProfile:
    """
    Noise model of a scripted teacher.

    While tracking, the teacher reports the ground truth perturbed by Gaussian center
    and scale noise scaled by its skill on the domain. With drift_prob per frame it
    enters a drift episode in which it keeps reporting a stale box, leaving the episode
    after drift_len frames (0 = never by timeout) or with recapture_prob per frame.
    """
    name: str
    center_noise_std: float = 0.0
    scale_noise_std: float = 0.0
    drift_prob: float = 0.0
    drift_len: int = 0
    recapture_prob: float = 0.0
    skill_map: dict[str, float] = field(default_factory=dict, hash=False, compare=False)
    latency_s: float = 0.0

    def __post_init__(self):
        for prob in (self.drift_prob, self.recapture_prob):
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"Teacher {self.name}: probabilities must be in [0, 1]")
        if min(self.center_noise_std, self.scale_noise_std, self.latency_s) < 0 or self.drift_len < 0:
            raise ValueError(f"Teacher {self.name}: noise, drift_len and latency must be >= 0")
        if any(m < 0 for m in self.skill_map.values()):
            raise ValueError(f"Teacher {self.name}: skill multipliers must be >= 0")

    def skill(self, domain: str) -> float:
        return float(self.skill_map.get(domain, 1.0))

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherProfile":
        return cls(
            name=str(d["name"]),
            center_noise_std=float(d.get("center_noise_std", 0.0)),
            scale_noise_std=float(d.get("scale_noise_std", 0.0)),
            drift_prob=float(d.get("drift_prob", 0.0)),
            drift_len=int(d.get("drift_len", 0)),
            recapture_prob=float(d.get("recapture_prob", 0.0)),
            skill_map={str(k): float(v) for k, v in (d.get("skill_map") or {}).items()},
            latency_s=float(d.get("latency_s", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "center_noise_std": self.center_noise_std,
            "scale_noise_std": self.scale_noise_std,
            "drift_prob": self.drift_prob,
            "drift_len": self.drift_len,
            "recapture_prob": self.recapture_prob,
            "skill_map": dict(sorted(self.skill_map.items())),
            "latency_s": self.latency_s,
        }


GROUNDTRUTH_TEACHER = TeacherProfile(name=config.GROUNDTRUTH_TEACHER_NAME)


@dataclass(frozen=True)
class TeacherPool:
    teachers: tuple[TeacherProfile, ...]
    selection_mode: SelectionMode = SelectionMode.QUALITY_ARGMAX

    def __post_init__(self):
        if not self.teachers:
            raise ValueError("Teacher pool must not be empty")
        names = [t.name for t in self.teachers]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate teacher names in pool: {names}")

    def get(self, name: str) -> TeacherProfile:
        for teacher in self.teachers:
            if teacher.name == name:
                return teacher
        raise KeyError(f"No teacher named '{name}' in pool {[t.name for t in self.teachers]}")

    def subset(self, names: list[str]) -> "TeacherPool":
        return TeacherPool(tuple(self.get(n) for n in names), self.selection_mode)


def default_pool(selection_mode: SelectionMode = SelectionMode.QUALITY_ARGMAX) -> TeacherPool:
    return TeacherPool(
        tuple(TeacherProfile.from_dict(d) for d in config.DEFAULT_TEACHER_POOL), selection_mode
    )


@dataclass
class TeacherState:
    """Per-video tracking state of one teacher; never shared between interactions."""
    last_box: BBox
    drifting: bool = False
    drift_left: int = 0


def teacher_predict(profile: TeacherProfile, gt: BBox, domain: str, state: TeacherState,
                    rng: np.random.Generator) -> BBox:
    """
    One frame of teacher tracking; advances state in place.

    Args:
        profile: Teacher noise model.
        gt: Ground-truth box of the current frame.
        domain: Domain preset name, looked up in the skill map.
        state: The teacher's state on this video.
        rng: The teacher's seed stream on this video.

    Returns:
        The teacher's box for this frame.
    """
    validate_box(gt)
    if state.drifting:
        if profile.drift_len:
            state.drift_left -= 1
        if (profile.drift_len and state.drift_left <= 0) or rng.random() < profile.recapture_prob:
            state.drifting = False
    if not state.drifting and profile.drift_prob > 0 and rng.random() < profile.drift_prob:
        state.drifting = True
        state.drift_left = profile.drift_len

    if state.drifting:
        return state.last_box

    multiplier = profile.skill(domain)
    box = gt
    if profile.center_noise_std > 0 or profile.scale_noise_std > 0:
        dcx, dcy = rng.normal(0.0, profile.center_noise_std * multiplier, size=2)
        sw, sh = rng.normal(0.0, profile.scale_noise_std * multiplier, size=2)
        w = max(gt.w * (1.0 + sw), config.MIN_BOX_SIZE)
        h = max(gt.h * (1.0 + sh), config.MIN_BOX_SIZE)
        cx, cy = gt.center
        box = BBox(cx + dcx - w / 2.0, cy + dcy - h / 2.0, w, h)
    state.last_box = box
    return box


def teacher_seed(master_seed: int, teacher_name: str, video_id: str) -> int:
    """Stable per-(teacher, video) seed so every worker sees the same teacher predictions."""
    return zlib.crc32(f"{master_seed}:{teacher_name}:{video_id}".encode()) & 0x7FFFFFFF


def run_teacher(profile: TeacherProfile, v: Video, seed: int) -> list[BBox]:
    """Teacher predictions over a whole video, initialised with the first ground-truth box."""
    rng = np.random.default_rng(seed)
    state = TeacherState(last_box=v.gt[0])
    boxes = [v.gt[0]]
    for gt in v.gt[1:]:
        boxes.append(teacher_predict(profile, gt, v.domain, state, rng))
    return boxes


def teacher_quality(profile: TeacherProfile, v: Video, w, seed: int = 0,
                    predictions: list[BBox] | None = None) -> float:
    """
    Mean weak-supervision score of the teacher's predictions over the frames where w is defined.

    Args:
        profile: Teacher to score.
        v: Video with ground truth.
        w: WeakSupFn deciding where and how predictions are scored.
        seed: Seed of the teacher's run when predictions are not given.
        predictions: Precomputed predictions for v (e.g. from a TeacherCache).
    """
    boxes = predictions if predictions is not None else run_teacher(profile, v, seed)
    scores = [s for t, box in enumerate(boxes) if (s := w.score(box, v, t)) is not None]
    if not scores:
        raise WeakSupervisionUndefinedError(f"Weak supervision is undefined on every frame of {v.id}")
    return float(np.mean(scores))


class TeacherCache:
    """Thread-safe cache of teacher predictions keyed by (teacher, video id, seed)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._predictions: dict[tuple[str, str, int], list[BBox]] = {}

    def predictions(self, profile: TeacherProfile, v: Video, seed: int) -> list[BBox]:
        key = (profile.name, v.id, seed)
        with self._lock:
            cached = self._predictions.get(key)
        if cached is not None:
            return cached
        boxes = run_teacher(profile, v, seed)
        with self._lock:
            self._predictions.setdefault(key, boxes)
        return boxes

    def __len__(self) -> int:
        return len(self._predictions)


def select_teacher(pool: TeacherPool, v: Video, w, seed: int,
                   cache: TeacherCache | None = None, master_seed: int = 0) -> TeacherProfile:
    """
    Picks the teacher for one video before the interaction starts.

    Quality-argmax takes the teacher with the highest quality on v (first listed wins
    ties); random draws uniformly from the pool using seed.
    """
    if len(pool.teachers) == 1:
        return pool.teachers[0]
    if pool.selection_mode is SelectionMode.RANDOM:
        rng = np.random.default_rng(seed)
        return pool.teachers[int(rng.integers(len(pool.teachers)))]

    best, best_quality = pool.teachers[0], -1.0
    for profile in pool.teachers:
        t_seed = teacher_seed(master_seed, profile.name, v.id)
        preds = cache.predictions(profile, v, t_seed) if cache is not None else None
        quality = teacher_quality(profile, v, w, t_seed, preds)
        logger.debug(f"Teacher {profile.name} quality on {v.id}: {quality:.3f}")
        if quality > best_quality:
            best, best_quality = profile, quality
    return best
