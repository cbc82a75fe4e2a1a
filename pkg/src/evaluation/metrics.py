"""Success and precision AUC metrics over one-pass runs."""

import logging
from dataclasses import dataclass

import numpy as np

import config
from evaluation.ope import TrackRun, fps_from_times
from tracking.geometry import BBox, center_distance, iou

logger = logging.getLogger(__name__)

# IoU thresholds 0.00, 0.02, ..., 0.98 with a strict >, so a perfect tracker scores 1.0.
IOU_THRESHOLDS = np.arange(config.SUCCESS_THRESHOLDS) / config.SUCCESS_THRESHOLDS
# Center-distance thresholds 0, 1, ..., 50 px with <=.
DISTANCE_THRESHOLDS = np.arange(config.PRECISION_MAX_DISTANCE + 1, dtype=np.float64)


class NoEvaluatedFramesError(ValueError):
    """Raised when a run has no frame left to score, e.g. a sparse stride longer than the video."""


@dataclass(frozen=True)
class Metrics:
    success_score: float
    precision_score: float
    precision_at_20: float
    fps: float
    success_curve: np.ndarray
    precision_curve: np.ndarray
    n_frames: int

    def as_row(self) -> dict:
        return {"ss": self.success_score, "ps": self.precision_score,
                "ps20": self.precision_at_20, "fps": self.fps}


def evaluated_frames(n: int, stride: int = 1) -> list[int]:
    """Frames scored under OPE: t > 0 with t mod stride == 0."""
    if stride < 1:
        raise ValueError(f"Sparse evaluation stride must be >= 1, got {stride}")
    return [t for t in range(1, n) if t % stride == 0]


def _check_lengths(run: TrackRun, gts: list[BBox]) -> None:
    if len(run.boxes) != len(gts):
        raise ValueError(f"Run {run.video_id} has {len(run.boxes)} boxes for {len(gts)} ground-truth frames")


def _frames_or_raise(run: TrackRun, gts: list[BBox], stride: int) -> list[int]:
    _check_lengths(run, gts)
    frames = evaluated_frames(len(gts), stride)
    if not frames:
        raise NoEvaluatedFramesError(f"No frame of {run.video_id} is evaluated with stride {stride}")
    return frames


def success_curve(run: TrackRun, gts: list[BBox], stride: int = 1) -> np.ndarray:
    frames = _frames_or_raise(run, gts, stride)
    overlaps = np.array([iou(run.boxes[t], gts[t]) for t in frames])
    return (overlaps[None, :] > IOU_THRESHOLDS[:, None]).mean(axis=1)


def precision_curve(run: TrackRun, gts: list[BBox], stride: int = 1) -> np.ndarray:
    frames = _frames_or_raise(run, gts, stride)
    distances = np.array([center_distance(run.boxes[t], gts[t]) for t in frames])
    return (distances[None, :] <= DISTANCE_THRESHOLDS[:, None]).mean(axis=1)


def success_score(run: TrackRun, gts: list[BBox], stride: int = 1) -> tuple[float, np.ndarray]:
    """AUC of the success plot (mean over the IoU thresholds) and the curve itself."""
    curve = success_curve(run, gts, stride)
    return float(curve.mean()), curve


def precision_score(run: TrackRun, gts: list[BBox], stride: int = 1) -> tuple[float, np.ndarray]:
    """AUC of the precision plot (mean over the distance thresholds) and the curve itself."""
    curve = precision_curve(run, gts, stride)
    return float(curve.mean()), curve


def evaluate_run(run: TrackRun, gts: list[BBox], stride: int = 1, fps_warmup: int = 0) -> Metrics:
    """Scores one run; FPS skips the initialisation frame and the fps_warmup frames after it."""
    ss, s_curve = success_score(run, gts, stride)
    ps, p_curve = precision_score(run, gts, stride)
    at_20 = float(p_curve[int(np.searchsorted(DISTANCE_THRESHOLDS, config.PRECISION_REPORT_DISTANCE))])
    metrics = Metrics(ss, ps, at_20, fps_from_times(run.times, fps_warmup), s_curve, p_curve,
                      len(evaluated_frames(len(gts), stride)))
    logger.debug(f"{run.video_id}: SS={ss:.4f} PS={ps:.4f} PS@20={at_20:.4f} over {metrics.n_frames} frames")
    return metrics


def sparse_eval(run: TrackRun, gts: list[BBox], k: int, fps_warmup: int = 0) -> Metrics:
    """Metrics computed only on frames where ground truth is assumed available (every k-th)."""
    return evaluate_run(run, gts, stride=k, fps_warmup=fps_warmup)


def aggregate(metrics: list[Metrics]) -> dict:
    """Unweighted mean over videos of SS, PS, PS@20 and FPS."""
    if not metrics:
        raise ValueError("Cannot aggregate an empty list of metrics")
    rows = [m.as_row() for m in metrics]
    return {key: float(np.mean([r[key] for r in rows])) for key in rows[0]}


def mean_curves(metrics: list[Metrics]) -> tuple[np.ndarray, np.ndarray]:
    return (np.mean([m.success_curve for m in metrics], axis=0),
            np.mean([m.precision_curve for m in metrics], axis=0))
