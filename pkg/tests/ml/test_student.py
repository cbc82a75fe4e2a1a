import numpy as np
import pytest
import torch

from ml.student import (
    ArchitectureSpec,
    Memory,
    NonFiniteGradientError,
    StudentNet,
    StudentParams,
    adam_step,
    build_student,
    forward,
    load_checkpoint,
    make_optimizer,
    optimizer_step_count,
    replay,
    restore_optimizer,
    sample_action,
    save_checkpoint,
    value_and_gradient,
)
from tracking.geometry import State

TINY = ArchitectureSpec(patch_size=8, conv_channels=(3,), hidden_size=6)


def random_patches(n, p=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, size=(n, p, p)), rng.uniform(0, 1, size=(n, p, p))


def perturbed_net(arch=TINY, seed=0):
    net = build_student(arch, seed)
    theta = np.random.default_rng(seed).normal(0, 0.3, size=StudentParams.from_net(net).n_params)
    return StudentParams(arch, theta).load_into(net)


@pytest.mark.parametrize("arch", [TINY, ArchitectureSpec(patch_size=8, conv_channels=(2, 3), hidden_size=5, recurrent=True)])
def test_gradient_matches_central_differences(arch):
    """Backprop gradient agrees with central finite differences on sampled coordinates."""
    net = perturbed_net(arch)
    prev, cur = random_patches(4)
    target = np.random.default_rng(1).uniform(-1, 1, size=(4, 4))

    def loss_fn(n):
        mu, values = replay(n, prev, cur)
        return ((mu - torch.as_tensor(target)) ** 2).sum() + (values ** 2).sum()

    _, grad = value_and_gradient(net, loss_fn)
    theta = StudentParams.from_net(net).theta.copy()
    eps = 1e-6
    checked = 0
    for idx in np.random.default_rng(2).choice(theta.size, size=25, replace=False):
        f = []
        for step in (eps, 0.0, -eps):
            t = theta.copy()
            t[idx] += step
            with torch.no_grad():
                f.append(float(loss_fn(StudentParams(arch, t).load_into(net))))
        numeric = (f[0] - f[2]) / (2 * eps)
        # ReLU kink inside the stencil
        if abs((f[0] - f[1]) - (f[1] - f[2])) / eps > 1e-3 * (1.0 + abs(numeric)):
            continue
        checked += 1
        assert float(grad[idx]) == pytest.approx(numeric, rel=1e-4, abs=1e-6)
    assert checked >= 12


GOLDEN_ARCH = ArchitectureSpec(patch_size=8, conv_channels=(1,), hidden_size=2)


def golden_net():
    """
    Hand-set parameters whose output can be computed exactly.

    The 4x4 stride-2 conv with unit weights over a constant patch c sums to 196c across
    its 16 outputs (zero padding leaves 3, 4, 4, 3 pixels per window row and column).
    Hidden unit 0 reads the current patch, unit 1 the previous one.
    """
    net = StudentNet(GOLDEN_ARCH)
    values = {
        "features.0.weight": torch.ones(1, 1, 4, 4),
        "features.0.bias": torch.zeros(1),
        "fc1.weight": torch.cat([torch.cat([torch.zeros(16), torch.full((16,), 1 / 196)])[None],
                                 torch.cat([torch.full((16,), 1 / 196), torch.zeros(16)])[None]]),
        "fc1.bias": torch.zeros(2),
        "fc2.weight": torch.eye(2),
        "fc2.bias": torch.tensor([0.0, 0.1]),
        "action_head.weight": torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0], [-2.0, 0.0]]),
        "action_head.bias": torch.tensor([0.0, 0.0, 0.0, 0.5]),
        "value_head.weight": torch.tensor([[2.0, -1.0]]),
        "value_head.bias": torch.tensor([0.3]),
    }
    with torch.no_grad():
        for name, param in net.named_parameters():
            param.copy_(values[name].to(torch.float64))
    return net


def test_forward_matches_stored_golden_output():
    state = State(np.full((8, 8), 0.25), np.full((8, 8), 0.5))
    out = forward(golden_net(), state, Memory.initial(GOLDEN_ARCH))
    # tanh of (0.5, 0.35, 0.15, -0.5); value 2 * 0.5 - 0.35 + 0.3
    np.testing.assert_allclose(out.mu, [0.462117157260010, 0.336375544336332, 0.148885033623318,
                                        -0.462117157260010], rtol=1e-12)
    assert out.value == pytest.approx(0.95, rel=1e-12)


def test_initial_policy_mean_is_zero():
    net = build_student(TINY, seed=3)
    prev, cur = random_patches(1)
    out = forward(net, State(prev[0], cur[0]), Memory.initial(TINY))
    np.testing.assert_array_equal(out.mu, np.zeros(4))
    assert out.memory.hidden is None


def test_initialization_is_seeded():
    a = StudentParams.from_net(build_student(TINY, seed=1)).theta
    b = StudentParams.from_net(build_student(TINY, seed=1)).theta
    c = StudentParams.from_net(build_student(TINY, seed=2)).theta
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_recurrent_replay_matches_step_by_step_forward():
    arch = ArchitectureSpec(patch_size=8, conv_channels=(2,), hidden_size=5, recurrent=True)
    net = perturbed_net(arch)
    prev, cur = random_patches(5)
    mu, values = replay(net, prev, cur)
    memory = Memory.initial(arch)
    for t in range(5):
        out = forward(net, State(prev[t], cur[t]), memory)
        np.testing.assert_allclose(out.mu, mu[t].detach().numpy(), atol=1e-12)
        assert out.value == pytest.approx(float(values[t]))
        memory = out.memory
    assert memory.hidden is not None


def test_state_resolution_must_match_architecture():
    net = build_student(TINY)
    prev, cur = random_patches(1, p=10)
    with pytest.raises(ValueError, match="does not match"):
        forward(net, State(prev[0], cur[0]), Memory())


def test_sample_action_keeps_raw_sample_and_clamps():
    raw, action = sample_action(np.array([0.99, -0.99, 0.0, 0.0]), 0.5, np.random.default_rng(0))
    assert raw.shape == (4,)
    assert all(-1.0 <= c <= 1.0 for c in action.as_array())
    with pytest.raises(ValueError):
        sample_action(np.zeros(4), 0.0, np.random.default_rng(0))


def test_sample_action_spread_matches_sigma():
    rng = np.random.default_rng(5)
    raws = np.array([sample_action(np.zeros(4), 0.05, rng)[0] for _ in range(10_000)])
    assert np.abs(raws.mean(axis=0)).max() < 0.005
    for std in raws.std(axis=0):
        assert std == pytest.approx(0.05, rel=0.05)


def test_adam_step_uses_separate_learning_rates():
    net = perturbed_net()
    optimizer = make_optimizer(net, lr_main=1e-3, lr_value_head=0.0)
    before = StudentParams.from_net(net).theta.copy()
    adam_step(net, optimizer, torch.ones(before.size, dtype=torch.float64))
    after = StudentParams.from_net(net).theta
    n_head = sum(p.numel() for p in net.value_head_parameters())
    # The value head is registered last.
    np.testing.assert_array_equal(after[-n_head:], before[-n_head:])
    np.testing.assert_allclose(after[:-n_head], before[:-n_head] - 1e-3, rtol=1e-6, atol=1e-9)
    assert optimizer_step_count(optimizer) == 1


def test_adam_step_rejects_bad_gradients():
    net = build_student(TINY)
    optimizer = make_optimizer(net)
    n = StudentParams.from_net(net).n_params
    with pytest.raises(NonFiniteGradientError):
        adam_step(net, optimizer, torch.full((n,), float("nan"), dtype=torch.float64))
    with pytest.raises(ValueError):
        adam_step(net, optimizer, torch.zeros(n + 1, dtype=torch.float64))


def test_params_are_immutable_and_finite():
    params = StudentParams.from_net(build_student(TINY))
    with pytest.raises(ValueError):
        params.theta[0] = 1.0
    with pytest.raises(ValueError):
        StudentParams(TINY, np.full(params.n_params, np.inf))


def test_checkpoint_round_trip(tmp_path):
    net = perturbed_net()
    optimizer = make_optimizer(net)
    adam_step(net, optimizer, torch.ones(StudentParams.from_net(net).n_params, dtype=torch.float64))
    params = StudentParams.from_net(net)
    path = tmp_path / "nested" / "student.ckpt"
    save_checkpoint(str(path), params, optimizer, {"iteration": 7})

    ckpt = load_checkpoint(str(path))
    assert ckpt.params.arch == TINY
    np.testing.assert_array_equal(ckpt.params.theta, params.theta)
    assert ckpt.metadata == {"iteration": 7}

    restored_net = ckpt.params.to_net()
    restored = make_optimizer(restored_net)
    restore_optimizer(restored, ckpt.optimizer_state)
    assert optimizer_step_count(restored) == 1


def test_checkpoint_version_is_checked(tmp_path, monkeypatch):
    path = tmp_path / "old.ckpt"
    save_checkpoint(str(path), StudentParams.from_net(build_student(TINY)))
    monkeypatch.setattr("ml.student.CHECKPOINT_FORMAT_VERSION", 99)
    with pytest.raises(ValueError, match="format version"):
        load_checkpoint(str(path))
