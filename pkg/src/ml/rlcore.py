"""Weak supervision, reward shaping, returns and the actor-critic / distillation losses."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.distributions import Normal

import config
from data.models import WeakSupKind, WorkerMode
from data.synthworld import Video
from tracking.geometry import BBox, iou, norm_dist_score

logger = logging.getLogger(__name__)

# nu() works on integer micro-units so grid boundaries such as 0.70 never misfloor.
_MICRO = 1_000_000
_GRID_STEP_MICRO = 50_000  # 0.05
_GRID_STEPS = _MICRO // _GRID_STEP_MICRO  # 20


class NonFiniteDensityError(ValueError):
    """Raised when the policy log-density of a recorded action is not finite."""


@dataclass(frozen=True)
class WeakSupFn:
    """
    A 0-1 evaluation of a predicted box against the reference, defined only on some steps.

    With use_labels, availability and kind come from the video's weaklabels.txt
    (kind falls back to self.kind for videos without per-frame kinds); otherwise
    step t is labelled iff t mod delay == 0 and scored with self.kind.
    """
    kind: WeakSupKind = WeakSupKind.IOU
    delay: int = config.WEAK_DELAY
    use_labels: bool = False

    def __post_init__(self):
        if self.delay < 1:
            raise ValueError(f"Weak supervision delay must be >= 1, got {self.delay}")

    def is_defined(self, t: int, video: Video) -> bool:
        if self.use_labels and video.weak_mask is not None:
            return bool(video.weak_mask[t])
        return t % self.delay == 0

    def kind_at(self, t: int, video: Video) -> WeakSupKind:
        if self.use_labels and video.weak_kinds is not None and video.weak_kinds[t] is not None:
            return video.weak_kinds[t]
        return self.kind

    def evaluate(self, box: BBox, reference: BBox, kind: WeakSupKind | None = None) -> float:
        if (kind or self.kind) is WeakSupKind.IOU:
            score = iou(box, reference)
        else:
            score = norm_dist_score(box, reference)
        return float(np.clip(score, 0.0, 1.0))

    def score(self, box: BBox, video: Video, t: int) -> float | None:
        if not self.is_defined(t, video):
            return None
        return self.evaluate(box, video.gt[t], self.kind_at(t, video))


@dataclass
class InteractionRecord:
    """Everything one interaction of a student with a video chunk produced, one row per step."""
    video_id: str
    mode: WorkerMode
    teacher: str
    patches_prev: np.ndarray  # (T, P, P)
    patches_cur: np.ndarray  # (T, P, P)
    raw_actions: np.ndarray  # (T, 4) sampled, before clamping
    actions: np.ndarray  # (T, 4) applied to the box
    mu: np.ndarray  # (T, 4)
    values: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    weak_scores: np.ndarray  # (T,) NaN where undefined
    boxes: np.ndarray  # (T, 4)
    teacher_boxes: np.ndarray  # (T, 4)
    teacher_actions: np.ndarray  # (T, 4)
    teacher_rewards: np.ndarray  # (T,)
    masks: np.ndarray  # (T,) in {0, 1}

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("patches_prev", "patches_cur", "raw_actions", "actions", "mu", "values",
                     "weak_scores", "boxes", "teacher_boxes", "teacher_actions",
                     "teacher_rewards", "masks"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"InteractionRecord.{name} has length {len(getattr(self, name))}, expected {n}")
        if n and (np.abs(self.rewards) > 1.0).any():
            raise ValueError("Rewards must lie in [-1, 1]")
        if n and not np.isin(self.masks, (0.0, 1.0)).all():
            raise ValueError("Distillation masks must be 0 or 1")

    def __len__(self) -> int:
        return len(self.rewards)


def nu(z: float) -> float:
    """Maps a 0-1 score to [-1, 1] after flooring it to the 0.05 grid: 2 * floor05(z) - 1."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"nu() expects a score in [0, 1], got {z}")
    steps = round(z * _MICRO) // _GRID_STEP_MICRO
    return (2 * steps - _GRID_STEPS) / _GRID_STEPS


def floor05(z: float) -> float:
    return (round(z * _MICRO) // _GRID_STEP_MICRO) / _GRID_STEPS


def reward(weak_score: float | None) -> float:
    """0 when supervision is undefined, -1 below 0.5, nu(score) otherwise."""
    if weak_score is None or (isinstance(weak_score, float) and math.isnan(weak_score)):
        return 0.0
    if weak_score < 0.5:
        return -1.0
    return nu(weak_score)


def returns(rewards, gamma: float, direction: str = "future") -> np.ndarray:
    """
    Discounted returns of a reward sequence.

    Args:
        rewards: Rewards r_1..r_T.
        gamma: Discount in [0, 1].
        direction: "future" for R_i = sum_{k>=i} gamma^(k-i) r_k (backward recursion),
            "past" for the prefix accumulation R_i = sum_{k<=i} gamma^(k-1) r_k.

    Returns:
        Array of the same length as rewards.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    r = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(r)
    if direction == "future":
        acc = 0.0
        for i in range(len(r) - 1, -1, -1):
            acc = r[i] + gamma * acc
            out[i] = acc
    elif direction == "past":
        acc, discount = 0.0, 1.0
        for i in range(len(r)):
            acc += discount * r[i]
            discount *= gamma
            out[i] = acc
    else:
        raise ValueError(f"Unknown returns direction '{direction}'")
    return out


def advantages(rewards: torch.Tensor, values: torch.Tensor, gamma: float) -> torch.Tensor:
    """A_i = r_i + gamma * v_{i+1} - v_i with v = 0 after the last step; no gradient flows through."""
    v = values.detach()
    v_next = torch.cat([v[1:], v.new_zeros(1)])
    return rewards + gamma * v_next - v


def policy_loss(mu: torch.Tensor, values: torch.Tensor, rec: InteractionRecord,
                sigma: float, gamma: float) -> torch.Tensor:
    """-sum_i log N(a_i | mu_i, sigma) * A_i over the pre-clamp sampled actions."""
    if len(rec) == 0:
        return mu.new_zeros(())
    raw = torch.as_tensor(rec.raw_actions, dtype=mu.dtype)
    log_prob = Normal(mu, sigma).log_prob(raw).sum(dim=-1)
    if not torch.isfinite(log_prob).all():
        raise NonFiniteDensityError(f"Non-finite policy log-density in record {rec.video_id}")
    adv = advantages(torch.as_tensor(rec.rewards, dtype=mu.dtype), values, gamma)
    return -(log_prob * adv).sum()


def value_loss(values: torch.Tensor, rec: InteractionRecord, gamma: float,
               direction: str = "future") -> torch.Tensor:
    """sum_i 1/2 (R_i - v_i)^2."""
    if len(rec) == 0:
        return values.new_zeros(())
    target = torch.as_tensor(returns(rec.rewards, gamma, direction), dtype=values.dtype)
    return 0.5 * ((target - values) ** 2).sum()


def distill_mask(r_teacher: float, r_student: float) -> int:
    """1 iff the teacher's reward is at least the student's; ties favour the teacher."""
    return int(r_teacher >= r_student)


def distill_loss(mu: torch.Tensor, rec: InteractionRecord) -> torch.Tensor:
    """sum_i |a_T,i - mu_i|_1 * m_i."""
    if len(rec) == 0:
        return mu.new_zeros(())
    target = torch.as_tensor(rec.teacher_actions, dtype=mu.dtype)
    masks = torch.as_tensor(rec.masks, dtype=mu.dtype)
    return ((target - mu).abs().sum(dim=-1) * masks).sum()


def masked_action_gap(rec: InteractionRecord) -> float:
    """Mean L1 gap between teacher action and student mean over masked steps (NaN if none)."""
    masked = rec.masks > 0
    if not masked.any():
        return float("nan")
    return float(np.abs(rec.teacher_actions[masked] - rec.mu[masked]).sum(axis=-1).mean())
