"""
The student: a small regression tracker over a pair of patches.

Shared convolutional branch per patch -> concatenation -> two dense layers ->
optional gated recurrent cell -> tanh-bounded action head and raw value head.
Everything runs in float64 so gradients can be checked against finite differences.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import joblib
import numpy as np
import torch
import torch.nn as nn

import config
from tracking.geometry import Action, State

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
ACTION_DIM = 4


class NonFiniteLossError(ValueError):
    """Raised when a loss evaluates to NaN or infinity."""


class NonFiniteGradientError(ValueError):
    """Raised when an optimizer step is asked to apply a NaN or infinite gradient."""


@dataclass(frozen=True)
class ArchitectureSpec:
    patch_size: int = config.PATCH_SIZE
    conv_channels: tuple[int, ...] = config.CONV_CHANNELS
    hidden_size: int = config.HIDDEN_SIZE
    recurrent: bool = False

    def __post_init__(self):
        if not 1 <= len(self.conv_channels) <= 3:
            raise ValueError(f"Expected 1 to 3 convolutional layers, got {self.conv_channels}")
        if self.patch_size < 4 or self.hidden_size < 1:
            raise ValueError(f"Invalid architecture: {self}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(
            patch_size=int(d["patch_size"]),
            conv_channels=tuple(int(c) for c in d["conv_channels"]),
            hidden_size=int(d["hidden_size"]),
            recurrent=bool(d["recurrent"]),
        )


@dataclass(frozen=True)
class Memory:
    """Recurrent hidden vector; None when recurrence is disabled."""
    hidden: torch.Tensor | None = None

    @classmethod
    def initial(cls, arch: ArchitectureSpec) -> "Memory":
        if not arch.recurrent:
            return cls(None)
        return cls(torch.zeros(1, arch.hidden_size, dtype=torch.float64))


@dataclass(frozen=True)
class StudentOutput:
    mu: np.ndarray
    value: float
    memory: Memory = field(repr=False)


class StudentNet(nn.Module):
    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.arch = arch
        layers = []
        in_ch = 1
        for i, out_ch in enumerate(arch.conv_channels):
            kernel = 4 if i == 0 else 3
            layers += [nn.Conv2d(in_ch, out_ch, kernel_size=kernel, stride=2, padding=1), nn.ReLU()]
            in_ch = out_ch
        layers.append(nn.Flatten())
        self.features = nn.Sequential(*layers)
        with torch.no_grad():
            n_feat = self.features(torch.zeros(1, 1, arch.patch_size, arch.patch_size)).shape[1]

        self.fc1 = nn.Linear(2 * n_feat, arch.hidden_size)
        self.fc2 = nn.Linear(arch.hidden_size, arch.hidden_size)
        self.rnn = nn.GRUCell(arch.hidden_size, arch.hidden_size) if arch.recurrent else None
        self.action_head = nn.Linear(arch.hidden_size, ACTION_DIM)
        self.value_head = nn.Linear(arch.hidden_size, 1)
        self.double()

    def forward(self, patches_prev: torch.Tensor, patches_cur: torch.Tensor,
                hidden: torch.Tensor | None = None):
        """
        Args:
            patches_prev: (B, P, P) patches from frame t-1.
            patches_cur: (B, P, P) patches from frame t.
            hidden: (B, H) recurrent state, ignored when recurrence is off.

        Returns:
            (mu (B, 4) in [-1, 1], value (B,), new hidden or None)
        """
        p = self.arch.patch_size
        if patches_prev.shape[-2:] != (p, p) or patches_cur.shape[-2:] != (p, p):
            raise ValueError(
                f"State resolution {tuple(patches_prev.shape[-2:])} does not match architecture P={p}"
            )
        f_prev = self.features(patches_prev.unsqueeze(1))
        f_cur = self.features(patches_cur.unsqueeze(1))
        x = torch.relu(self.fc1(torch.cat([f_prev, f_cur], dim=1)))
        x = torch.relu(self.fc2(x))
        new_hidden = None
        if self.rnn is not None:
            if hidden is None:
                hidden = x.new_zeros(x.shape[0], self.arch.hidden_size)
            x = new_hidden = self.rnn(x, hidden)
        mu = torch.tanh(self.action_head(x))
        value = self.value_head(x).squeeze(-1)
        return mu, value, new_hidden

    def value_head_parameters(self) -> list[nn.Parameter]:
        return list(self.value_head.parameters())

    def main_parameters(self) -> list[nn.Parameter]:
        head = {id(p) for p in self.value_head.parameters()}
        return [p for p in self.parameters() if id(p) not in head]


def initialize(net: StudentNet, seed: int) -> StudentNet:
    """Orthogonal weights, zero biases, zero action head (initial mu = 0 everywhere)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for name, param in net.named_parameters():
            if name.startswith("action_head") or "bias" in name:
                nn.init.zeros_(param)
            else:
                nn.init.orthogonal_(param)
    return net


def build_student(arch: ArchitectureSpec | None = None, seed: int = 0) -> StudentNet:
    return initialize(StudentNet(arch or ArchitectureSpec()), seed)


@dataclass(frozen=True)
class StudentParams:
    """Immutable snapshot of the flat parameter vector theta and its architecture."""
    arch: ArchitectureSpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not np.isfinite(self.theta).all():
            raise ValueError("Student parameters must be finite")
        self.theta.flags.writeable = False

    @property
    def n_params(self) -> int:
        return int(self.theta.size)

    @classmethod
    def from_net(cls, net: StudentNet) -> "StudentParams":
        vec = nn.utils.parameters_to_vector(net.parameters()).detach().cpu().numpy().copy()
        return cls(net.arch, vec)

    def load_into(self, net: StudentNet) -> StudentNet:
        if net.arch != self.arch:
            raise ValueError(f"Architecture mismatch: {net.arch} vs {self.arch}")
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.as_tensor(self.theta.copy()), net.parameters())
        return net

    def to_net(self) -> StudentNet:
        return self.load_into(StudentNet(self.arch))


def _as_batch(patch: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(patch, dtype=np.float64)).unsqueeze(0)


def forward(net: StudentNet, s: State, m: Memory) -> StudentOutput:
    """Acting-time forward pass on a single state; pure given (net, s, m)."""
    with torch.no_grad():
        mu, value, hidden = net(_as_batch(s.patch_prev), _as_batch(s.patch_cur), m.hidden)
    return StudentOutput(mu[0].numpy().copy(), float(value[0]), Memory(hidden))


def replay(net: StudentNet, patches_prev: np.ndarray, patches_cur: np.ndarray):
    """
    Differentiable forward pass over a recorded trajectory, memory reset at its start.

    Returns:
        (mu (T, 4), values (T,)) as tensors attached to the graph.
    """
    prev = torch.as_tensor(np.asarray(patches_prev, dtype=np.float64))
    cur = torch.as_tensor(np.asarray(patches_cur, dtype=np.float64))
    if net.rnn is None:
        mu, values, _ = net(prev, cur)
        return mu, values
    hidden = None
    mus, values = [], []
    for t in range(prev.shape[0]):
        mu_t, v_t, hidden = net(prev[t:t + 1], cur[t:t + 1], hidden)
        mus.append(mu_t)
        values.append(v_t)
    return torch.cat(mus), torch.cat(values)


def sample_action(mu: np.ndarray, sigma: float, rng: np.random.Generator) -> tuple[np.ndarray, Action]:
    """Draws from N(mu, sigma) per component; returns the raw sample and its clamp to [-1, 1]."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    raw = rng.normal(np.asarray(mu, dtype=np.float64), sigma)
    return raw, Action.from_array(raw)


def flat_grad(net: StudentNet) -> torch.Tensor:
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in net.parameters()
    ]).detach().clone()


def value_and_gradient(net: StudentNet, loss_fn: Callable[[StudentNet], torch.Tensor]) -> tuple[float, torch.Tensor]:
    """Evaluates loss_fn(net) and its exact gradient with respect to the flat parameter vector."""
    net.zero_grad(set_to_none=True)
    loss = loss_fn(net)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"Loss is not finite: {float(loss)}")
    if loss.requires_grad:
        loss.backward()
    grad = flat_grad(net)
    net.zero_grad(set_to_none=True)
    return float(loss), grad


def gradient(net: StudentNet, loss_fn: Callable[[StudentNet], torch.Tensor]) -> torch.Tensor:
    return value_and_gradient(net, loss_fn)[1]


def make_optimizer(net: StudentNet, lr_main: float = config.LR_MAIN,
                   lr_value_head: float = config.LR_VALUE_HEAD) -> torch.optim.Adam:
    return torch.optim.Adam([
        {"params": net.main_parameters(), "lr": lr_main},
        {"params": net.value_head_parameters(), "lr": lr_value_head},
    ])


def adam_step(net: StudentNet, optimizer: torch.optim.Optimizer, grad: torch.Tensor) -> None:
    """Applies one Adam update with the given flat gradient; value head uses its own learning rate."""
    if not torch.isfinite(grad).all():
        raise NonFiniteGradientError("Refusing to apply a non-finite gradient")
    offset = 0
    for p in net.parameters():
        n = p.numel()
        p.grad = grad[offset:offset + n].view_as(p).clone()
        offset += n
    if offset != grad.numel():
        raise ValueError(f"Gradient has {grad.numel()} entries, network has {offset} parameters")
    optimizer.step()
    net.zero_grad(set_to_none=True)


def optimizer_step_count(optimizer: torch.optim.Optimizer) -> int:
    steps = [int(s["step"]) for s in optimizer.state.values() if "step" in s]
    return max(steps, default=0)


# Checkpoints ---------------------------------------------------------------

def _to_numpy(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy().copy()
    if isinstance(obj, dict):
        return {k: _to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_numpy(v) for v in obj)
    return obj


def _to_torch(obj):
    if isinstance(obj, np.ndarray):
        return torch.as_tensor(obj.copy())
    if isinstance(obj, dict):
        return {k: _to_torch(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_torch(v) for v in obj)
    return obj


@dataclass
class Checkpoint:
    params: StudentParams
    optimizer_state: dict | None
    metadata: dict


def save_checkpoint(path: str, params: StudentParams, optimizer: torch.optim.Optimizer | None = None,
                    metadata: dict | None = None) -> None:
    """Writes a checkpoint; the layout is documented in docs/checkpoint_format.md."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": params.arch.to_dict(),
        "theta": np.array(params.theta, dtype=np.float64),
        "optimizer": None if optimizer is None else _to_numpy(optimizer.state_dict()),
        "metadata": dict(metadata or {}),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    joblib.dump(payload, path)
    logger.info(f"Saved checkpoint ({params.n_params} parameters) to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    payload = joblib.load(path)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"Unsupported checkpoint format version {version} in {path}")
    params = StudentParams(ArchitectureSpec.from_dict(payload["architecture"]), payload["theta"])
    logger.info(f"Loaded checkpoint from {path} ({params.n_params} parameters)")
    return Checkpoint(params, payload["optimizer"], payload["metadata"])


def restore_optimizer(optimizer: torch.optim.Optimizer, state: dict | None) -> None:
    if state is not None:
        optimizer.load_state_dict(_to_torch(state))
