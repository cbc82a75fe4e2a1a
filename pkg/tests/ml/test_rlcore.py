import math

import numpy as np
import pytest
import torch

from data.models import WeakSupKind, WorkerMode
from data.synthworld import Video
from ml.rlcore import (
    InteractionRecord,
    NonFiniteDensityError,
    WeakSupFn,
    advantages,
    distill_loss,
    distill_mask,
    floor05,
    masked_action_gap,
    nu,
    policy_loss,
    returns,
    reward,
    value_loss,
)
from tracking.geometry import BBox


def make_record(n=3, rewards=None, raw_actions=None, teacher_actions=None, masks=None, mu=None):
    p = 4
    return InteractionRecord(
        video_id="v",
        mode=WorkerMode.RL,
        teacher="t",
        patches_prev=np.zeros((n, p, p)),
        patches_cur=np.zeros((n, p, p)),
        raw_actions=np.zeros((n, 4)) if raw_actions is None else np.asarray(raw_actions, dtype=float),
        actions=np.zeros((n, 4)),
        mu=np.zeros((n, 4)) if mu is None else np.asarray(mu, dtype=float),
        values=np.zeros(n),
        rewards=np.zeros(n) if rewards is None else np.asarray(rewards, dtype=float),
        weak_scores=np.full(n, np.nan),
        boxes=np.ones((n, 4)),
        teacher_boxes=np.ones((n, 4)),
        teacher_actions=np.zeros((n, 4)) if teacher_actions is None else np.asarray(teacher_actions, dtype=float),
        teacher_rewards=np.zeros(n),
        masks=np.ones(n) if masks is None else np.asarray(masks, dtype=float),
    )


@pytest.mark.parametrize("z, expected", [
    (1.0, 1.0), (0.5, 0.0), (0.73, 0.4), (0.70, 0.4), (0.99, 0.9), (0.0, -1.0), (0.55, 0.1),
])
def test_nu_floors_to_the_grid(z, expected):
    assert nu(z) == pytest.approx(expected, abs=1e-12)


def test_nu_rejects_scores_outside_unit_interval():
    with pytest.raises(ValueError):
        nu(1.01)
    assert floor05(0.64) == pytest.approx(0.60)


@pytest.mark.parametrize("score, expected", [(None, 0.0), (float("nan"), 0.0), (0.49, -1.0), (0.2, -1.0),
                                             (0.5, 0.0), (0.8, 0.6), (1.0, 1.0)])
def test_reward_table(score, expected):
    assert reward(score) == pytest.approx(expected)


def test_future_returns_match_double_sum():
    rng = np.random.default_rng(0)
    for trial in range(500):
        r = rng.choice([-1.0, 0.0, 0.1, 0.4, 1.0], size=rng.integers(1, 65))
        gamma = (0.0, 0.5, 0.9, 0.99, 1.0)[trial % 5]
        expected = [sum(gamma ** (k - i) * r[k] for k in range(i, len(r))) for i in range(len(r))]
        np.testing.assert_allclose(returns(r, gamma), expected, rtol=1e-12, atol=1e-12)


def test_past_returns_accumulate_prefix():
    r = [1.0, -1.0, 0.5]
    np.testing.assert_allclose(returns(r, 0.5, direction="past"), [1.0, 0.5, 0.625])
    with pytest.raises(ValueError):
        returns(r, 0.5, direction="sideways")
    with pytest.raises(ValueError):
        returns(r, 1.5)


def test_advantages_bootstrap_from_next_value():
    rewards = torch.tensor([1.0, 0.0, -1.0], dtype=torch.float64)
    values = torch.tensor([0.5, 0.25, 1.0], dtype=torch.float64, requires_grad=True)
    adv = advantages(rewards, values, gamma=0.5)
    torch.testing.assert_close(adv, torch.tensor([1.0 + 0.125 - 0.5, 0.5 - 0.25, -1.0 - 1.0], dtype=torch.float64))
    assert not adv.requires_grad


@pytest.mark.parametrize("r_teacher, r_student, expected", [
    (1.0, 0.0, 1), (0.0, 1.0, 0), (0.4, 0.4, 1), (-1.0, -1.0, 1), (-1.0, 0.0, 0),
])
def test_distill_mask_truth_table(r_teacher, r_student, expected):
    assert distill_mask(r_teacher, r_student) == expected


def test_policy_loss_at_the_mean():
    """log N(mu | mu, 0.05) summed over 4 components with advantage 1."""
    rec = make_record(n=1, rewards=[1.0])
    mu = torch.zeros(1, 4, dtype=torch.float64)
    values = torch.zeros(1, dtype=torch.float64)
    loss = policy_loss(mu, values, rec, sigma=0.05, gamma=0.9)
    expected = -4 * (-math.log(0.05) - 0.5 * math.log(2 * math.pi))
    assert float(loss) == pytest.approx(expected, rel=1e-9)
    assert float(loss) == pytest.approx(-8.307, abs=1e-3)


def test_policy_loss_rejects_non_finite_density():
    rec = make_record(n=1, rewards=[1.0], raw_actions=[[np.nan, 0, 0, 0]])
    with pytest.raises(NonFiniteDensityError):
        policy_loss(torch.zeros(1, 4, dtype=torch.float64), torch.zeros(1, dtype=torch.float64), rec, 0.05, 0.9)


def test_value_loss_is_half_squared_error():
    rec = make_record(n=2, rewards=[1.0, 1.0])
    values = torch.tensor([0.0, 0.5], dtype=torch.float64)
    # returns with gamma 1: [2, 1]
    assert float(value_loss(values, rec, gamma=1.0)) == pytest.approx(0.5 * (4.0 + 0.25))


def test_distill_loss_counts_masked_steps_only():
    rec = make_record(n=2, teacher_actions=[[0.1, -0.2, 0.0, 0.3], [1.0, 1.0, 1.0, 1.0]], masks=[1, 0])
    mu = torch.zeros(2, 4, dtype=torch.float64)
    assert float(distill_loss(mu, rec)) == pytest.approx(0.6)
    assert masked_action_gap(rec) == pytest.approx(0.6)
    assert math.isnan(masked_action_gap(make_record(n=2, masks=[0, 0])))


def test_empty_record_losses_are_zero():
    rec = make_record(n=0)
    mu = torch.zeros(0, 4, dtype=torch.float64)
    values = torch.zeros(0, dtype=torch.float64)
    assert float(policy_loss(mu, values, rec, 0.05, 0.9)) == 0.0
    assert float(value_loss(values, rec, 0.9)) == 0.0
    assert float(distill_loss(mu, rec)) == 0.0


def test_record_validation():
    with pytest.raises(ValueError):
        make_record(n=2, rewards=[0.0, 1.5])
    with pytest.raises(ValueError):
        make_record(n=2, masks=[0.0, 0.5])


def test_weak_supervision_availability():
    gt = [BBox(10.0, 10.0, 10.0, 10.0)] * 6
    frames = [np.zeros((32, 32))] * 6
    mask = np.array([True, False, False, False, True, False])
    v = Video(frames, gt, "v", weak_mask=mask)
    delayed = WeakSupFn(WeakSupKind.IOU, delay=3)
    assert [delayed.is_defined(t, v) for t in range(6)] == [True, False, False, True, False, False]
    labelled = WeakSupFn(WeakSupKind.IOU, delay=3, use_labels=True)
    assert [labelled.is_defined(t, v) for t in range(6)] == list(mask)
    assert labelled.score(gt[1], v, 1) is None
    assert labelled.score(gt[4], v, 4) == 1.0
    assert WeakSupFn(WeakSupKind.IOU).evaluate(BBox(15.0, 10.0, 10.0, 10.0), gt[0]) == pytest.approx(1 / 3)
    assert labelled.kind_at(4, v) is WeakSupKind.IOU
    with pytest.raises(ValueError):
        WeakSupFn(delay=0)


def test_per_frame_label_kind_overrides_configured_kind():
    gt = [BBox(10.0, 10.0, 10.0, 10.0)] * 3
    kinds = [WeakSupKind.IOU, None, WeakSupKind.NORMDIST]
    v = Video([np.zeros((32, 32))] * 3, gt, "v", weak_mask=np.array([True, False, True]), weak_kinds=kinds)
    shifted = BBox(20.0, 10.0, 10.0, 10.0)
    labelled = WeakSupFn(WeakSupKind.IOU, delay=1, use_labels=True)
    assert labelled.score(shifted, v, 0) == 0.0
    assert labelled.score(shifted, v, 1) is None
    assert labelled.score(shifted, v, 2) == pytest.approx(0.5)
    # Per-frame kinds only apply when the labels are in use.
    assert WeakSupFn(WeakSupKind.IOU, delay=1).score(shifted, v, 2) == 0.0
