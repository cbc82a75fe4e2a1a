import numpy as np
import pytest

from data.models import SelectionMode, WeakSupKind
from data.synthworld import generate_video, get_preset
from ml.rlcore import WeakSupFn
from tracking.geometry import BBox, iou
from tracking.teachers import (
    GROUNDTRUTH_TEACHER,
    TeacherCache,
    TeacherPool,
    TeacherProfile,
    TeacherState,
    WeakSupervisionUndefinedError,
    default_pool,
    run_teacher,
    select_teacher,
    teacher_predict,
    teacher_quality,
    teacher_seed,
)

NOISY = TeacherProfile(name="noisy", center_noise_std=6.0, scale_noise_std=0.2)
EXACT = TeacherProfile(name="exact")


@pytest.fixture(scope="module")
def video():
    return generate_video(get_preset("source"), 3, 16)


def test_noise_free_teacher_reproduces_ground_truth(video):
    boxes = run_teacher(EXACT, video, seed=0)
    assert boxes == video.gt
    assert teacher_quality(EXACT, video, WeakSupFn(WeakSupKind.IOU, 1)) == 1.0
    assert run_teacher(GROUNDTRUTH_TEACHER, video, seed=5) == video.gt


def test_teacher_runs_are_deterministic_per_seed(video):
    assert run_teacher(NOISY, video, 11) == run_teacher(NOISY, video, 11)
    assert run_teacher(NOISY, video, 11) != run_teacher(NOISY, video, 12)


def test_skill_map_scales_noise(video):
    blind = TeacherProfile(name="blind", center_noise_std=4.0, skill_map={"source": 0.0})
    for box, gt in zip(run_teacher(blind, video, 0), video.gt):
        np.testing.assert_allclose(box.as_array(), gt.as_array(), atol=1e-9)
    assert blind.skill("thermal-like") == 1.0


def test_permanent_drift_repeats_the_first_box(video):
    stuck = TeacherProfile(name="stuck", drift_prob=1.0)
    assert run_teacher(stuck, video, 0) == [video.gt[0]] * len(video)


def test_drift_episode_ends_after_drift_len_frames():
    profile = TeacherProfile(name="drifter", drift_len=2)
    stale = BBox(0.0, 0.0, 10.0, 10.0)
    state = TeacherState(last_box=stale, drifting=True, drift_left=2)
    rng = np.random.default_rng(0)
    assert teacher_predict(profile, BBox(5.0, 5.0, 10.0, 10.0), "source", state, rng) == stale
    recovered = teacher_predict(profile, BBox(6.0, 6.0, 10.0, 10.0), "source", state, rng)
    assert recovered == BBox(6.0, 6.0, 10.0, 10.0)
    assert not state.drifting and state.last_box == recovered


def test_quality_is_mean_score_over_defined_frames(video):
    noisy_boxes = run_teacher(NOISY, video, 4)
    w = WeakSupFn(WeakSupKind.IOU, delay=5)
    expected = np.mean([iou(noisy_boxes[t], video.gt[t]) for t in (0, 5, 10, 15)])
    assert teacher_quality(NOISY, video, w, predictions=noisy_boxes) == pytest.approx(expected)


def test_quality_undefined_everywhere_raises(video):
    unlabelled = video.slice(0, len(video), "unlabelled")
    unlabelled.weak_mask = np.zeros(len(video), dtype=bool)
    with pytest.raises(WeakSupervisionUndefinedError):
        teacher_quality(EXACT, unlabelled, WeakSupFn(WeakSupKind.IOU, 1, use_labels=True))


def test_quality_argmax_prefers_the_better_teacher():
    """The noise-free teacher is selected on every one of 100 videos, although listed second."""
    pool = TeacherPool((NOISY, EXACT), SelectionMode.QUALITY_ARGMAX)
    w = WeakSupFn(WeakSupKind.NORMDIST, 1)
    spec = get_preset("source")
    picks = [select_teacher(pool, generate_video(spec, s, 6), w, seed=s).name for s in range(100)]
    assert picks.count("exact") == 100


@pytest.mark.parametrize("teachers", [(NOISY, EXACT), (NOISY, EXACT, TeacherProfile(name="drifty", drift_prob=0.1))])
def test_random_selection_is_uniform(video, teachers):
    pool = TeacherPool(teachers, SelectionMode.RANDOM)
    w = WeakSupFn()
    picks = [select_teacher(pool, video, w, seed=s).name for s in range(10_000)]
    for teacher in teachers:
        assert picks.count(teacher.name) / len(picks) == pytest.approx(1 / len(teachers), abs=0.02)


@pytest.mark.parametrize("domain, expected_std", [("source", 2.0), ("thermal-like", 3.0)])
def test_center_noise_has_the_configured_spread(domain, expected_std):
    profile = TeacherProfile(name="jitter", center_noise_std=2.0, skill_map={"thermal-like": 1.5})
    gt = BBox(50.0, 50.0, 20.0, 20.0)
    rng = np.random.default_rng(8)
    offsets = []
    for _ in range(10_000):
        box = teacher_predict(profile, gt, domain, TeacherState(gt), rng)
        offsets.append(np.subtract(box.center, gt.center))
    offsets = np.array(offsets)
    assert box.w == gt.w and box.h == gt.h
    assert np.abs(offsets.mean(axis=0)).max() < 0.1
    for std in offsets.std(axis=0):
        assert std == pytest.approx(expected_std, rel=0.05)


def test_selection_uses_the_cache(video):
    cache = TeacherCache()
    pool = TeacherPool((NOISY, EXACT))
    select_teacher(pool, video, WeakSupFn(), seed=0, cache=cache, master_seed=9)
    assert len(cache) == 2
    seed = teacher_seed(9, "noisy", video.id)
    assert cache.predictions(NOISY, video, seed) is cache.predictions(NOISY, video, seed)
    assert len(cache) == 2


def test_teacher_seed_is_stable_and_distinct():
    assert teacher_seed(0, "a", "v") == teacher_seed(0, "a", "v")
    assert teacher_seed(0, "a", "v") != teacher_seed(0, "b", "v")
    assert teacher_seed(0, "a", "v") != teacher_seed(1, "a", "v")


def test_pool_lookup_and_validation():
    pool = default_pool()
    assert [t.name for t in pool.teachers] == ["mdnet-like", "siamrpn-like", "atom-like"]
    assert pool.subset(["atom-like"]).teachers[0].name == "atom-like"
    with pytest.raises(KeyError):
        pool.get("missing")
    with pytest.raises(ValueError):
        TeacherPool((EXACT, EXACT))
    with pytest.raises(ValueError):
        TeacherPool(())
    with pytest.raises(ValueError):
        TeacherProfile(name="bad", drift_prob=1.5)


def test_profile_dict_round_trip():
    profile = TeacherProfile.from_dict(default_pool().teachers[0].to_dict())
    assert profile == default_pool().teachers[0]
    assert profile.skill_map == {"drone-like": 0.7, "thermal-like": 1.0, "underwater-like": 2.0}
