"""Bounding-box arithmetic, weak-supervision scores, action transforms and state patches."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

import config

logger = logging.getLogger(__name__)


class InvalidBoxError(ValueError):
    """Raised when a box has non-positive size or non-finite coordinates."""


class EmptyFrameError(ValueError):
    """Raised when a frame has no pixels."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixels: left edge, top edge, width, height."""
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "BBox":
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Action:
    """Relative motion (dx, dy, dw, dh); each component lies in [-1, 1]."""
    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Action":
        clipped = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
        return cls(*(float(v) for v in clipped))


@dataclass(frozen=True)
class State:
    """Pair of P x P patches cropped around the previous box from two consecutive frames."""
    patch_prev: np.ndarray
    patch_cur: np.ndarray

    def __post_init__(self):
        if self.patch_prev.shape != self.patch_cur.shape:
            raise ValueError(
                f"State patches differ in shape: {self.patch_prev.shape} vs {self.patch_cur.shape}"
            )

    @property
    def patch_size(self) -> int:
        return self.patch_prev.shape[0]

    def stacked(self) -> np.ndarray:
        """Both patches as a (2, P, P) array, the layout the student consumes."""
        return np.stack([self.patch_prev, self.patch_cur])


def validate_box(b: BBox) -> None:
    values = (b.x, b.y, b.w, b.h)
    if not all(math.isfinite(v) for v in values):
        raise InvalidBoxError(f"Box has non-finite coordinates: {b}")
    if b.w <= 0 or b.h <= 0:
        raise InvalidBoxError(f"Box must have positive width and height: {b}")


def iou(b: BBox, g: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when they are disjoint."""
    validate_box(b)
    validate_box(g)
    iw = max(0.0, min(b.x + b.w, g.x + g.w) - max(b.x, g.x))
    ih = max(0.0, min(b.y + b.h, g.y + g.h) - max(b.y, g.y))
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    union = b.area + g.area - inter
    return min(1.0, inter / union)


def center_distance(b: BBox, g: BBox) -> float:
    (bx, by), (gx, gy) = b.center, g.center
    return math.hypot(bx - gx, by - gy)


def norm_dist_score(b: BBox, g: BBox, truncation: float = config.NORM_DIST_TRUNCATION) -> float:
    """1 - min(center distance, 20) / 20."""
    validate_box(b)
    validate_box(g)
    return 1.0 - min(center_distance(b, g), truncation) / truncation


def apply_action(prev: BBox, a: Action, min_size: float = config.MIN_BOX_SIZE) -> BBox:
    """Moves prev by a translation proportional to its extent and a multiplicative rescale."""
    return BBox(
        prev.x + a.dx * prev.w,
        prev.y + a.dy * prev.h,
        max(prev.w * (1.0 + a.dw), min_size),
        max(prev.h * (1.0 + a.dh), min_size),
    )


def invert_action(prev: BBox, target: BBox) -> Action:
    """The action that moves prev onto target, clamped componentwise to [-1, 1]."""
    validate_box(prev)
    validate_box(target)
    raw = (
        (target.x - prev.x) / prev.w,
        (target.y - prev.y) / prev.h,
        target.w / prev.w - 1.0,
        target.h / prev.h - 1.0,
    )
    return Action.from_array(raw)


def crop_window(prev: BBox, chi: float) -> BBox:
    """prev scaled by chi about its center."""
    cx, cy = prev.center
    w, h = prev.w * chi, prev.h * chi
    return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _resample(frame: np.ndarray, window: BBox, patch_size: int) -> np.ndarray:
    # half-pixel centers: pixel k covers [k, k + 1) and is sampled at index k
    steps = (np.arange(patch_size, dtype=np.float64) + 0.5) / patch_size
    xs = window.x + steps * window.w - 0.5
    ys = window.y + steps * window.h - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    patch = ndimage.map_coordinates(
        frame, [grid_y, grid_x], order=1, mode="grid-constant", cval=0.0
    )
    return np.clip(patch, 0.0, 1.0)


def crop_state(
    frame_prev: np.ndarray,
    frame_cur: np.ndarray,
    prev: BBox,
    chi: float = config.CONTEXT_FACTOR,
    patch_size: int = config.PATCH_SIZE,
) -> State:
    """
    Builds the MDP state from two consecutive frames around the previous box.

    Args:
        frame_prev: Grayscale frame t-1, values in [0, 1].
        frame_cur: Grayscale frame t, values in [0, 1].
        prev: Box predicted at t-1.
        chi: Context factor enlarging the crop window (>= 1).
        patch_size: Output resolution P.

    Returns:
        State holding two P x P bilinear resamplings, zero-padded outside the frame.
    """
    for frame in (frame_prev, frame_cur):
        if frame.ndim != 2 or frame.size == 0:
            raise EmptyFrameError(f"Expected a non-empty 2-D frame, got shape {frame.shape}")
    if chi < 1.0:
        raise ValueError(f"Context factor must be >= 1, got {chi}")
    validate_box(prev)

    window = crop_window(prev, chi)
    return State(
        _resample(np.asarray(frame_prev, dtype=np.float64), window, patch_size),
        _resample(np.asarray(frame_cur, dtype=np.float64), window, patch_size),
    )
