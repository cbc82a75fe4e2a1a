import numpy as np
import pytest

from evaluation.metrics import (
    DISTANCE_THRESHOLDS,
    IOU_THRESHOLDS,
    NoEvaluatedFramesError,
    aggregate,
    evaluate_run,
    evaluated_frames,
    mean_curves,
    precision_score,
    sparse_eval,
    success_score,
)
from evaluation.ope import TrackRun
from tracking.geometry import BBox


def moving_gts(n=20):
    return [BBox(10.0 + 2 * t, 20.0 + t, 30.0, 20.0) for t in range(n)]


def run_of(boxes, times=None):
    return TrackRun("v", list(boxes), list(times or []))


def test_threshold_grids():
    assert len(IOU_THRESHOLDS) == 50 and IOU_THRESHOLDS[0] == 0.0 and IOU_THRESHOLDS[-1] == pytest.approx(0.98)
    assert DISTANCE_THRESHOLDS.tolist() == list(range(51))


def test_oracle_run_scores_one():
    gts = moving_gts()
    metrics = evaluate_run(run_of(gts), gts)
    assert metrics.success_score == 1.0
    assert metrics.precision_score == 1.0
    assert metrics.precision_at_20 == 1.0
    assert metrics.n_frames == 19


def test_constant_half_overlap_scores_one_half():
    """A box covering exactly half of g on every frame is a success for the 25 thresholds below 0.5."""
    gts = moving_gts()
    boxes = [gts[0]] + [BBox(g.x, g.y, g.w, g.h / 2) for g in gts[1:]]
    ss, curve = success_score(run_of(boxes), gts)
    assert ss == 0.5
    assert curve[:25].tolist() == [1.0] * 25 and curve[25:].tolist() == [0.0] * 25


def test_constant_center_offset_precision():
    gts = moving_gts()
    offset = [gts[0]] + [g.translated(25.0, 0.0) for g in gts[1:]]
    ps, curve = precision_score(run_of(offset), gts)
    # distance 25 passes thresholds 25..50
    assert ps == pytest.approx(26 / 51)
    assert evaluate_run(run_of(offset), gts).precision_at_20 == 0.0

    far = [gts[0]] + [g.translated(60.0, 0.0) for g in gts[1:]]
    assert precision_score(run_of(far), gts)[0] == 0.0


def test_first_frame_is_not_scored():
    gts = moving_gts(5)
    boxes = [BBox(500.0, 500.0, 1.0, 1.0)] + gts[1:]
    assert success_score(run_of(boxes), gts)[0] == 1.0


def test_sparse_evaluation():
    gts = moving_gts(10)
    rng = np.random.default_rng(0)
    boxes = [gts[0]] + [g.translated(*rng.normal(0, 5, 2)) for g in gts[1:]]
    run = run_of(boxes)
    dense = evaluate_run(run, gts)
    k1 = sparse_eval(run, gts, 1)
    assert k1.success_score == dense.success_score and k1.precision_score == dense.precision_score
    assert evaluated_frames(10, 3) == [3, 6, 9]
    assert sparse_eval(run, gts, 3).n_frames == 3
    with pytest.raises(NoEvaluatedFramesError):
        sparse_eval(run, gts, 10)
    with pytest.raises(ValueError):
        evaluated_frames(10, 0)


def test_metrics_are_translation_invariant():
    gts = moving_gts()
    rng = np.random.default_rng(1)
    boxes = [gts[0]] + [g.translated(*rng.normal(0, 6, 2)) for g in gts[1:]]
    shifted = evaluate_run(run_of([b.translated(100, -7) for b in boxes]), [g.translated(100, -7) for g in gts])
    base = evaluate_run(run_of(boxes), gts)
    assert shifted.success_score == pytest.approx(base.success_score)
    assert shifted.precision_score == pytest.approx(base.precision_score)


def test_fps_ignores_the_initialisation_frame():
    gts = moving_gts(5)
    metrics = evaluate_run(run_of(gts, [5.0, 0.1, 0.1, 0.1, 0.1]), gts)
    assert metrics.fps == pytest.approx(10.0)
    assert np.isnan(evaluate_run(run_of(gts), gts).fps)


def test_fps_skips_the_warmup_frames():
    """Slow first updates are excluded once they fall inside the warmup."""
    gts = moving_gts(7)
    run = run_of(gts, [5.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1])
    assert evaluate_run(run, gts).fps == pytest.approx(6 / 2.4)
    assert evaluate_run(run, gts, fps_warmup=2).fps == pytest.approx(10.0)
    assert sparse_eval(run, gts, 2, fps_warmup=2).fps == pytest.approx(10.0)
    assert np.isnan(evaluate_run(run, gts, fps_warmup=6).fps)
    with pytest.raises(ValueError):
        evaluate_run(run, gts, fps_warmup=-1)


def test_length_mismatch_is_rejected():
    gts = moving_gts(5)
    with pytest.raises(ValueError):
        evaluate_run(run_of(gts[:4]), gts)


def test_aggregate_is_unweighted_mean():
    long_gts, short_gts = moving_gts(30), moving_gts(3)
    perfect = evaluate_run(run_of(long_gts), long_gts)
    lost = evaluate_run(run_of([short_gts[0]] + [g.translated(200, 0) for g in short_gts[1:]]), short_gts)
    summary = aggregate([perfect, lost])
    assert summary["ss"] == pytest.approx(0.5)
    assert summary["ps"] == pytest.approx(0.5)
    s_curve, p_curve = mean_curves([perfect, lost])
    assert s_curve.shape == (50,) and p_curve.shape == (51,)
    with pytest.raises(ValueError):
        aggregate([])
