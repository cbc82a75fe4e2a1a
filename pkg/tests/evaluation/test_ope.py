import numpy as np
import pytest

from data.synthworld import Video, generate_video, get_preset
from evaluation.ope import (
    OracleTracker,
    StayTracker,
    StudentTracker,
    TeacherTracker,
    TrackingFailedError,
    TrackRun,
    measure_fps,
    run_ope,
    track_videos,
)
from ml.student import ArchitectureSpec, build_student
from tracking.geometry import BBox
from tracking.teachers import TeacherProfile


@pytest.fixture(scope="module")
def video():
    return generate_video(get_preset("source"), 1, 10)


class ExplodingTracker:
    name = "exploding"

    def init(self, frame, box):
        pass

    def update(self, frame):
        raise RuntimeError("lost")


class DegenerateTracker(StayTracker):
    name = "degenerate"

    def update(self, frame):
        return BBox(0.0, 0.0, 0.0, 5.0)


def test_oracle_run_reproduces_ground_truth(video):
    run = run_ope(OracleTracker(video.gt), video)
    assert run.boxes == video.gt
    assert len(run.times) == len(video)


def test_first_box_is_the_initial_ground_truth(video):
    run = run_ope(StayTracker(), video)
    assert run.boxes == [video.gt[0]] * len(video)


def test_zero_initialised_student_stays_put(video):
    net = build_student(ArchitectureSpec(patch_size=8, conv_channels=(2,), hidden_size=4))
    run = run_ope(StudentTracker(net), video)
    assert run.boxes == [video.gt[0]] * len(video)


def test_noise_free_teacher_tracker(video):
    run = run_ope(TeacherTracker(TeacherProfile(name="exact"), video), video)
    assert run.boxes == video.gt


def test_tracker_failures_are_reported(video):
    with pytest.raises(TrackingFailedError, match="frame 1"):
        run_ope(ExplodingTracker(), video)
    with pytest.raises(TrackingFailedError):
        run_ope(DegenerateTracker(), video)


def test_single_frame_video_is_rejected():
    v = Video([np.zeros((16, 16))], [BBox(1.0, 1.0, 4.0, 4.0)], "single")
    with pytest.raises(ValueError):
        run_ope(StayTracker(), v)


def test_track_run_checks_timings():
    with pytest.raises(ValueError):
        TrackRun("v", [BBox(0, 0, 1, 1)] * 3, [0.1, 0.1])


def test_measure_fps_with_fixed_latency(video):
    """A tracker sleeping 100 ms per frame runs at about 10 frames per second."""
    slow = TeacherTracker(TeacherProfile(name="slow", latency_s=0.1), video)
    assert measure_fps(slow, video, warmup=2) == pytest.approx(10.0, rel=0.15)
    with pytest.raises(ValueError):
        measure_fps(StayTracker(), video, warmup=9)


def test_track_videos_keeps_input_order():
    videos = [generate_video(get_preset("source"), s, 4) for s in range(5)]
    runs = track_videos(lambda v: OracleTracker(v.gt), videos, jobs=3)
    assert [r.video_id for r in runs] == [v.id for v in videos]
    assert all(r.boxes == v.gt for r, v in zip(runs, videos))
