"""
Synthetic single-target videos for a source domain and shifted target domains.

Each DomainSpec preset stands in for one kind of application domain (tiny aerial
targets, thermal imagery, underwater footage, ...). Videos are deterministic per
(spec, seed, length), and their ground truth is the exact box the target was rendered in.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

import config
from data.models import Appearance, MotionModel, WeakSupKind
from tracking.geometry import BBox

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    frame_size: int = config.FRAME_SIZE
    target_size_range: tuple[float, float] = (12.0, 24.0)
    motion_model: MotionModel = MotionModel.LINEAR_BOUNCE
    speed_range: tuple[float, float] = (1.0, 3.0)
    appearance: Appearance = Appearance.SOLID_BLOB
    clutter_density: float = 0.0
    noise_std: float = 0.0
    background: float = 0.0
    scale_rate: float = 0.0
    recommended_sigma: float = config.SIGMA

    def __post_init__(self):
        lo, hi = self.target_size_range
        if not 0 < lo <= hi < self.frame_size / 2:
            raise ValueError(f"Invalid target_size_range {self.target_size_range} for {self.name}")
        slo, shi = self.speed_range
        if not 0 <= slo <= shi < self.frame_size / 4:
            raise ValueError(f"Invalid speed_range {self.speed_range} for {self.name}")
        if self.clutter_density < 0 or self.noise_std < 0:
            raise ValueError(f"clutter_density and noise_std must be >= 0 for {self.name}")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError(f"background must be in [0, 1] for {self.name}")

    @property
    def target_level(self) -> float:
        return 0.1 if self.appearance is Appearance.INVERTED_MODALITY else 1.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "frame_size": self.frame_size,
            "target_size_range": list(self.target_size_range),
            "motion_model": self.motion_model.value,
            "speed_range": list(self.speed_range),
            "appearance": self.appearance.value,
            "clutter_density": self.clutter_density,
            "noise_std": self.noise_std,
            "background": self.background,
            "scale_rate": self.scale_rate,
            "recommended_sigma": self.recommended_sigma,
        }


PRESETS: dict[str, DomainSpec] = {
    spec.name: spec
    for spec in (
        DomainSpec(
            name="source",
            target_size_range=(14.0, 24.0),
            speed_range=(1.0, 3.0),
            clutter_density=0.5,
            noise_std=0.02,
        ),
        DomainSpec(
            name="drone-like",
            target_size_range=(5.0, 9.0),
            motion_model=MotionModel.RANDOM_WALK,
            speed_range=(0.5, 2.0),
            clutter_density=2.0,
            noise_std=0.03,
            background=0.15,
        ),
        DomainSpec(
            name="thermal-like",
            target_size_range=(12.0, 22.0),
            appearance=Appearance.INVERTED_MODALITY,
            clutter_density=0.5,
            noise_std=0.06,
            background=0.8,
        ),
        DomainSpec(
            name="underwater-like",
            target_size_range=(12.0, 22.0),
            motion_model=MotionModel.SINUSOIDAL,
            appearance=Appearance.TEXTURED_BLOB,
            noise_std=0.08,
            background=0.25,
            recommended_sigma=0.025,
        ),
        DomainSpec(
            name="driving-like",
            target_size_range=(10.0, 28.0),
            speed_range=(2.5, 5.0),
            clutter_density=1.0,
            noise_std=0.02,
            scale_rate=0.01,
        ),
        DomainSpec(
            name="fishtank-like",
            target_size_range=(8.0, 14.0),
            motion_model=MotionModel.RANDOM_WALK,
            appearance=Appearance.TEXTURED_BLOB,
            clutter_density=4.0,
            noise_std=0.03,
            background=0.1,
        ),
    )
}


def get_preset(name: str) -> DomainSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown domain preset '{name}'. Available: {sorted(PRESETS)}") from None


@dataclass(eq=False)
class Video:
    """
    Ordered frames with one ground-truth box per frame.

    weak_mask marks the frames that carry a weak label; weak_kinds, when present,
    holds the label's kind for those frames and None elsewhere.
    """
    frames: list[np.ndarray]
    gt: list[BBox]
    id: str
    domain: str = ""
    weak_mask: np.ndarray | None = field(default=None, repr=False)
    weak_kinds: list[WeakSupKind | None] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise ValueError(
                f"Video {self.id}: {len(self.frames)} frames but {len(self.gt)} boxes"
            )
        if self.weak_mask is not None and len(self.weak_mask) != len(self.frames):
            raise ValueError(f"Video {self.id}: weak-label mask length does not match frames")
        if self.weak_kinds is not None:
            if self.weak_mask is None or len(self.weak_kinds) != len(self.frames):
                raise ValueError(f"Video {self.id}: weak-label kinds need a mask of the same length")
            if any((k is not None) != bool(m) for k, m in zip(self.weak_kinds, self.weak_mask)):
                raise ValueError(f"Video {self.id}: weak-label kinds must be set exactly on masked frames")

    def __len__(self) -> int:
        return len(self.frames)

    def slice(self, start: int, stop: int, video_id: str) -> "Video":
        mask = None if self.weak_mask is None else self.weak_mask[start:stop].copy()
        kinds = None if self.weak_kinds is None else list(self.weak_kinds[start:stop])
        return Video(self.frames[start:stop], self.gt[start:stop], video_id, self.domain, mask, kinds)


def _reflect(pos: float, vel: float, extent: float, size: float) -> tuple[float, float]:
    if pos < 0.0:
        return -pos, -vel
    if pos + extent > size:
        return 2.0 * (size - extent) - pos, -vel
    return pos, vel


def simulate_motion(
    spec: DomainSpec,
    start: BBox,
    velocity: tuple[float, float],
    length: int,
    rng: np.random.Generator,
) -> list[BBox]:
    """
    Runs the domain's motion model from a start box.

    Args:
        spec: Domain whose motion model, frame size and scale drift apply.
        start: Box at frame 0.
        velocity: Initial (vx, vy) in pixels per frame.
        length: Number of boxes to produce (start included).
        rng: Randomness for the stochastic motion models.

    Returns:
        One box per frame, every box inside the frame.
    """
    size = float(spec.frame_size)
    speed_cap = spec.speed_range[1]
    x, y, w, h = start.x, start.y, start.w, start.h
    vx, vy = velocity
    cx0, cy0 = start.center
    amp_x = max(0.0, min(cx0 - w / 2.0, size - cx0 - w / 2.0)) * 0.45
    amp_y = max(0.0, min(cy0 - h / 2.0, size - cy0 - h / 2.0)) * 0.45
    speed = float(np.hypot(vx, vy))
    omega = speed / max(amp_x, amp_y, 1.0)
    phase_x, phase_y = rng.uniform(0.0, 2.0 * np.pi, size=2)

    boxes = [start]
    for t in range(1, length):
        if spec.scale_rate:
            grown = min(w * (1.0 + spec.scale_rate), spec.target_size_range[1])
            h *= grown / w
            w = grown
        if spec.motion_model is MotionModel.SINUSOIDAL:
            cx = cx0 + amp_x * (np.sin(omega * t + phase_x) - np.sin(phase_x))
            cy = cy0 + amp_y * (np.sin(omega * t + phase_y) - np.sin(phase_y))
            x, y = cx - w / 2.0, cy - h / 2.0
        else:
            if spec.motion_model is MotionModel.RANDOM_WALK:
                vx += rng.normal(0.0, 0.3 * max(speed, 0.1))
                vy += rng.normal(0.0, 0.3 * max(speed, 0.1))
                norm = np.hypot(vx, vy)
                if norm > speed_cap:
                    vx, vy = vx * speed_cap / norm, vy * speed_cap / norm
            x, vx = _reflect(x + vx, vx, w, size)
            y, vy = _reflect(y + vy, vy, h, size)
        x = float(np.clip(x, 0.0, size - w))
        y = float(np.clip(y, 0.0, size - h))
        boxes.append(BBox(x, y, float(w), float(h)))
    return boxes


def _ellipse_mask(box: BBox, size: int) -> np.ndarray:
    centers = np.arange(size, dtype=np.float64) + 0.5
    cx, cy = box.center
    u = ((centers[None, :] - cx) / (box.w / 2.0)) ** 2
    v = ((centers[:, None] - cy) / (box.h / 2.0)) ** 2
    return (u + v) <= 1.0


def _texture(box: BBox, size: int, phase: float) -> np.ndarray:
    centers = np.arange(size, dtype=np.float64) + 0.5
    u = (centers[None, :] - box.x) / box.w
    v = (centers[:, None] - box.y) / box.h
    return 0.55 + 0.45 * np.cos(2.0 * np.pi * (2.0 * u + 1.5 * v) + phase)


def _render(
    spec: DomainSpec,
    target: BBox,
    distractors: list[tuple[BBox, float]],
    texture_phase: float,
    rng: np.random.Generator,
) -> np.ndarray:
    size = spec.frame_size
    frame = np.full((size, size), spec.background, dtype=np.float64)
    for box, level in distractors:
        frame[_ellipse_mask(box, size)] = level
    mask = _ellipse_mask(target, size)
    if spec.appearance is Appearance.TEXTURED_BLOB:
        frame[mask] = _texture(target, size, texture_phase)[mask]
    else:
        frame[mask] = spec.target_level
    if spec.noise_std > 0:
        frame += rng.normal(0.0, spec.noise_std, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)


def _random_start(spec: DomainSpec, rng: np.random.Generator) -> tuple[BBox, tuple[float, float]]:
    lo, hi = spec.target_size_range
    w = rng.uniform(lo, hi)
    h = float(np.clip(w * rng.uniform(0.7, 1.3), lo, hi))
    x = rng.uniform(0.0, spec.frame_size - w)
    y = rng.uniform(0.0, spec.frame_size - h)
    speed = rng.uniform(*spec.speed_range)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return BBox(float(x), float(y), float(w), h), (speed * np.cos(angle), speed * np.sin(angle))


def _distractor_count(spec: DomainSpec, rng: np.random.Generator) -> int:
    whole = int(np.floor(spec.clutter_density))
    return whole + int(rng.random() < spec.clutter_density - whole)


def generate_video(spec: DomainSpec, seed: int, length: int) -> Video:
    """
    Renders a deterministic single-target video for the given domain.

    Args:
        spec: Domain to render.
        seed: Seed; the same (spec, seed, length) always yields the same video.
        length: Number of frames (>= 2).

    Returns:
        Video with exact ground truth, id '<domain>-<seed>'.
    """
    if length < 2:
        raise ValueError(f"Video length must be >= 2, got {length}")
    rng = np.random.default_rng(seed)

    start, velocity = _random_start(spec, rng)
    gt = simulate_motion(spec, start, velocity, length, rng)

    # Distractors drift slowly and are drawn under the target.
    tracks = []
    for _ in range(_distractor_count(spec, rng)):
        d_start, d_vel = _random_start(spec, rng)
        d_vel = (0.5 * d_vel[0], 0.5 * d_vel[1])
        d_spec = replace(spec, motion_model=MotionModel.LINEAR_BOUNCE, scale_rate=0.0)
        level = float(np.clip(spec.target_level + rng.uniform(-0.3, 0.3), 0.0, 1.0))
        tracks.append((simulate_motion(d_spec, d_start, d_vel, length, rng), level))

    texture_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    frames = [
        _render(spec, gt[t], [(boxes[t], level) for boxes, level in tracks], texture_phase, rng)
        for t in range(length)
    ]
    video_id = f"{spec.name}-{seed:06d}"
    logger.debug(f"Generated video {video_id} ({length} frames, {len(tracks)} distractors)")
    return Video(frames, gt, video_id, spec.name)


def chunk_sequences(v: Video, chunk_len: int = config.CHUNK_LEN, n_chunks: int = config.N_CHUNKS,
                    seed: int = 0) -> list[Video]:
    """Cuts n_chunks windows of chunk_len consecutive frames; starts drawn uniformly with replacement."""
    if len(v) < chunk_len:
        raise ValueError(f"Video {v.id} has {len(v)} frames, shorter than chunk_len={chunk_len}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, len(v) - chunk_len + 1, size=n_chunks)
    return [
        v.slice(int(s), int(s) + chunk_len, f"{v.id}/c{i:02d}@{int(s)}")
        for i, s in enumerate(starts)
    ]


def reverse_video(v: Video) -> Video:
    mask = None if v.weak_mask is None else v.weak_mask[::-1].copy()
    kinds = None if v.weak_kinds is None else v.weak_kinds[::-1]
    return Video(v.frames[::-1], v.gt[::-1], f"{v.id}~rev", v.domain, mask, kinds)


def maybe_reverse(v: Video, p: float = config.REVERSE_PROB, seed: int = 0) -> Video:
    """Returns the time-reversed video with probability p, else v itself."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Reversal probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return reverse_video(v) if rng.random() < p else v
