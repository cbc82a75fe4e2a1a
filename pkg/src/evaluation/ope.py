"""One-pass evaluation: trackers are initialised once with the first ground-truth box and never reset."""

import concurrent.futures
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

import config
from data.synthworld import Video
from ml.student import Memory, StudentNet, forward
from tracking.geometry import Action, BBox, apply_action, crop_state, validate_box
from tracking.teachers import TeacherProfile, TeacherState, teacher_predict

logger = logging.getLogger(__name__)


class TrackingFailedError(RuntimeError):
    """Raised when a tracker fails during a one-pass run."""


class Tracker(Protocol):
    name: str

    def init(self, frame: np.ndarray, box: BBox) -> None: ...

    def update(self, frame: np.ndarray) -> BBox: ...


class StudentTracker:
    """Tracks with the student's deterministic policy: the action is the mean mu, never sampled."""

    def __init__(self, net: StudentNet, chi: float = config.CONTEXT_FACTOR, name: str = "student"):
        self.net = net
        self.chi = chi
        self.name = name
        self._frame = None
        self._box = None
        self._memory = None

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self._frame, self._box = frame, box
        self._memory = Memory.initial(self.net.arch)

    def update(self, frame: np.ndarray) -> BBox:
        state = crop_state(self._frame, frame, self._box, self.chi, self.net.arch.patch_size)
        out = forward(self.net, state, self._memory)
        self._box = apply_action(self._box, Action.from_array(out.mu))
        self._frame, self._memory = frame, out.memory
        return self._box


class TeacherTracker:
    """A scripted teacher replayed on one video; it needs that video's ground truth."""

    def __init__(self, profile: TeacherProfile, video: Video, seed: int = 0):
        self.profile = profile
        self.name = f"teacher:{profile.name}"
        self._video = video
        self._seed = seed
        self._t = 0
        self._state = None
        self._rng = None

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self._t = 0
        self._state = TeacherState(last_box=box)
        self._rng = np.random.default_rng(self._seed)

    def update(self, frame: np.ndarray) -> BBox:
        self._t += 1
        if self.profile.latency_s:
            time.sleep(self.profile.latency_s)
        return teacher_predict(self.profile, self._video.gt[self._t], self._video.domain,
                               self._state, self._rng)


class OracleTracker:
    name = "oracle"

    def __init__(self, gts: list[BBox]):
        self._gts = gts
        self._t = 0

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self._t = 0

    def update(self, frame: np.ndarray) -> BBox:
        self._t += 1
        return self._gts[self._t]


class StayTracker:
    name = "stay"

    def __init__(self):
        self._box = None

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self._box = box

    def update(self, frame: np.ndarray) -> BBox:
        return self._box


@dataclass
class TrackRun:
    video_id: str
    boxes: list[BBox]
    times: list[float] = field(default_factory=list)  # seconds per frame, frame 0 = init

    def __post_init__(self):
        if self.times and len(self.times) != len(self.boxes):
            raise ValueError(f"TrackRun {self.video_id}: {len(self.boxes)} boxes but {len(self.times)} timings")


def run_ope(tracker: Tracker, video: Video) -> TrackRun:
    """
    Runs a tracker over a whole video under the one-pass protocol.

    Args:
        tracker: Any object with init(frame, box) and update(frame) -> BBox.
        video: Video with at least two frames and its first ground-truth box.

    Returns:
        TrackRun whose first box is g_0 and with wall-clock time per frame.
    """
    if len(video) < 2:
        raise ValueError(f"Video {video.id} needs at least 2 frames for one-pass evaluation")

    start = time.perf_counter()
    tracker.init(video.frames[0], video.gt[0])
    times = [time.perf_counter() - start]
    boxes = [video.gt[0]]
    for t in range(1, len(video)):
        start = time.perf_counter()
        try:
            box = tracker.update(video.frames[t])
            validate_box(box)
        except Exception as e:
            logger.error(f"Tracker {tracker.name} failed on {video.id} at frame {t}: {e}", exc_info=True)
            raise TrackingFailedError(f"{tracker.name} failed on {video.id} at frame {t}: {e}") from e
        times.append(time.perf_counter() - start)
        boxes.append(box)
    return TrackRun(video.id, boxes, times)


def fps_from_times(times: list[float], warmup: int = 0) -> float:
    """Frames per second over the frames after initialisation and the warmup ones; NaN if none are left."""
    if warmup < 0:
        raise ValueError(f"FPS warmup must be >= 0, got {warmup}")
    timed = times[1 + warmup:]
    if not timed:
        return float("nan")
    return len(timed) / max(sum(timed), 1e-12)


def measure_fps(tracker: Tracker, video: Video, warmup: int = config.FPS_WARMUP_FRAMES) -> float:
    """Frames per second over the frames after the warmup ones; run alone for valid timings."""
    if len(video) <= warmup + 1:
        raise ValueError(f"Video {video.id} has {len(video)} frames, too short for warmup={warmup}")
    return fps_from_times(run_ope(tracker, video).times, warmup)


def track_videos(make_tracker: Callable[[Video], Tracker], videos: list[Video],
                 jobs: int = 1) -> list[TrackRun]:
    """Runs one fresh tracker per video, in parallel threads when jobs > 1; results keep input order."""
    if jobs <= 1:
        return [run_ope(make_tracker(v), v) for v in videos]

    runs: dict[int, TrackRun] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        future_to_index = {
            executor.submit(run_ope, make_tracker(v), v): i for i, v in enumerate(videos)
        }
        completed = 0
        for future in concurrent.futures.as_completed(future_to_index):
            runs[future_to_index[future]] = future.result()
            completed += 1
            if completed % 10 == 0 or completed == len(videos):
                logger.info(f"Tracked {completed}/{len(videos)} videos...")
    return [runs[i] for i in range(len(videos))]
