from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roundabout_rl.learner import LearnerConfig
from roundabout_rl.network import (
    LossWeights,
    NetworkConfig,
    NonFiniteGradient,
    ShapeError,
    active_network_config,
    backward,
    clip_global_norm,
    copy_params,
    forward,
    global_norm,
    init_params,
    mini_network_config,
    param_keys,
    sample_action,
    surrogate_loss,
    zeros_like_params,
)
from oracles import finite_difference_grads

DATA = Path(__file__).parent / "data"

MINI = mini_network_config(4)


def random_inputs(cfg: NetworkConfig, rng, batch=3):
    frames = rng.integers(0, 2, size=(batch, cfg.in_channels, cfg.in_hw, cfg.in_hw)).astype(float)
    nonvis = rng.uniform(0, 1, size=(batch, cfg.nonvisual_dim))
    return frames, nonvis


def test_zero_params_give_zero_value_uniform_policy():
    params = zeros_like_params(init_params(MINI, np.random.default_rng(0)))
    frames = np.zeros((MINI.in_channels, MINI.in_hw, MINI.in_hw))
    nonvis = np.zeros(MINI.nonvisual_dim)
    value, policy = forward(params, MINI, frames, nonvis)
    assert value == 0.0
    np.testing.assert_allclose(policy, [1 / 3] * 3, atol=1e-15)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_policy_is_on_the_simplex(seed):
    rng = np.random.default_rng(seed)
    params = init_params(MINI, rng)
    frames, nonvis = random_inputs(MINI, rng, batch=2)
    _, policy = forward(params, MINI, frames, nonvis)
    assert np.all(policy > 0) and np.all(policy < 1)
    np.testing.assert_allclose(policy.sum(axis=1), 1.0, atol=1e-6)


def test_forward_golden_value_bit_exact():
    # Golden outputs generated once by this same forward pass (fixed seed,
    # documented summation order); regenerate with scripts/gen_golden.py.
    golden = np.load(DATA / "golden_forward.npz")
    rng = np.random.default_rng(2718)
    params = init_params(MINI, rng)
    frames, nonvis = random_inputs(MINI, rng, batch=1)
    value, policy = forward(params, MINI, frames, nonvis)
    np.testing.assert_array_equal(value, golden["value"])
    np.testing.assert_array_equal(policy, golden["policy"])
    # And the pass is bit-deterministic in-process.
    value2, policy2 = forward(params, MINI, frames, nonvis)
    np.testing.assert_array_equal(value, value2)
    np.testing.assert_array_equal(policy, policy2)


def test_forward_shape_mismatch_raises():
    params = init_params(MINI, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(params, MINI, np.zeros((5, 5, 5)), np.zeros(MINI.nonvisual_dim))
    with pytest.raises(ShapeError):
        forward(
            params, MINI,
            np.zeros((MINI.in_channels, MINI.in_hw, MINI.in_hw)),
            np.zeros(MINI.nonvisual_dim + 1),
        )


def test_conv_shapes_default_profile():
    cfg = active_network_config()
    assert cfg.conv_shapes() == [(16, 84), (16, 20), (32, 9)]
    assert cfg.flat_dim == 32 * 9 * 9


def test_sample_action_degenerate_and_deterministic():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert sample_action(np.array([1.0, 0.0, 0.0]), rng) == 0
    a = [sample_action(np.array([0.2, 0.5, 0.3]), np.random.default_rng(7)) for _ in range(20)]
    b = [sample_action(np.array([0.2, 0.5, 0.3]), np.random.default_rng(7)) for _ in range(20)]
    assert a == b


def test_sample_action_frequencies():
    rng = np.random.default_rng(31)
    p = np.array([1 / 3, 1 / 3, 1 / 3])
    n = 30_000
    counts = np.bincount([sample_action(p, rng) for _ in range(n)], minlength=3)
    for c in counts:
        assert abs(c / n - 1 / 3) < 0.02


def _fd_setup(seed, cfg=MINI, batch=3, min_pre=1e-3):
    """Params/inputs for a finite-difference check, rerolled away from
    rectifier kinks (pre-activations too close to zero would make the
    central difference itself invalid)."""
    from roundabout_rl.network import _forward_cached

    attempt = seed
    while True:
        rng = np.random.default_rng(attempt)
        params = init_params(cfg, rng)
        frames, nonvis = random_inputs(cfg, rng, batch)
        _, _, cache = _forward_cached(params, cfg, frames, nonvis)
        pres = [np.abs(p).min() for p in cache["pre"]] + [np.abs(cache["fc_pre"]).min()]
        if min(pres) > min_pre:
            actions = rng.integers(0, cfg.n_actions, size=batch)
            returns = rng.uniform(-1, 1, size=batch)
            return params, frames, nonvis, actions, returns
        attempt += 100_003


def _check_grads_vs_fd(seed, w=LossWeights()):
    params, frames, nonvis, actions, returns = _fd_setup(seed)
    base_value, _ = forward(params, MINI, frames, nonvis)
    adv_const = returns - base_value
    grads, adv = backward(params, MINI, frames, nonvis, actions, returns, w)
    np.testing.assert_allclose(adv, adv_const, atol=1e-12)

    def loss_fn(p):
        return surrogate_loss(p, MINI, frames, nonvis, actions, returns, adv_const, w)

    fd = finite_difference_grads(loss_fn, copy_params(params), h=1e-5)
    for key in param_keys(MINI):
        err = np.abs(grads[key] - fd[key])
        tol = 1e-4 * np.abs(fd[key]) + 1e-7
        assert (err <= tol).all(), (
            f"{key}: max rel err "
            f"{(err / (np.abs(fd[key]) + 1e-12)).max():.2e}"
        )


def test_gradients_match_finite_differences():
    _check_grads_vs_fd(0)


def test_gradients_match_finite_differences_value_only():
    _check_grads_vs_fd(1, w=LossWeights(value_loss_weight=1.0, entropy_beta=0.0))


def test_gradients_match_finite_differences_entropy_only():
    _check_grads_vs_fd(2, w=LossWeights(value_loss_weight=0.0, entropy_beta=0.5))


def test_zero_advantage_zero_entropy_gives_zero_head_gradients():
    rng = np.random.default_rng(4)
    params = init_params(MINI, rng)
    frames, nonvis = random_inputs(MINI, rng)
    value, _ = forward(params, MINI, frames, nonvis)
    returns = value.copy()  # advantage exactly zero
    w = LossWeights(value_loss_weight=0.5, entropy_beta=0.0)
    grads, adv = backward(params, MINI, frames, nonvis, np.array([0, 1, 2]), returns, w)
    np.testing.assert_allclose(adv, 0.0, atol=1e-15)
    for key in ("policy_w", "policy_b", "value_w", "value_b"):
        np.testing.assert_allclose(grads[key], 0.0, atol=1e-12)


def test_reward_doubling_scales_loss_terms():
    # With a zero value head the advantage equals the return, so doubling
    # rewards doubles the policy-term gradient exactly and quadruples the
    # value term; the entropy term does not change.
    rng = np.random.default_rng(8)
    params = init_params(MINI, rng)
    params["value_w"][...] = 0.0
    params["value_b"][...] = 0.0
    frames, nonvis = random_inputs(MINI, rng)
    actions = np.array([0, 2, 1])
    returns = rng.uniform(0.5, 1.0, size=3)

    def grads_for(w, rets):
        g, _ = backward(params, MINI, frames, nonvis, actions, rets, w)
        return g

    policy_only = LossWeights(value_loss_weight=0.0, entropy_beta=0.0)
    with_value = LossWeights(value_loss_weight=1.0, entropy_beta=0.0)
    with_entropy = LossWeights(value_loss_weight=0.0, entropy_beta=0.01)
    for rets, scale in ((returns, 1.0), (2.0 * returns, 2.0)):
        pg = grads_for(policy_only, rets)
        vg = grads_for(with_value, rets)
        eg = grads_for(with_entropy, rets)
        pg1 = grads_for(policy_only, returns)
        vg1 = grads_for(with_value, returns)
        eg1 = grads_for(with_entropy, returns)
        for key in param_keys(MINI):
            # Policy term scales linearly with the advantage.
            np.testing.assert_allclose(pg[key], scale * pg1[key], rtol=1e-12, atol=1e-12)
            # Value-term gradient (-2 w A dV) also scales linearly.
            np.testing.assert_allclose(
                vg[key] - pg[key], scale * (vg1[key] - pg1[key]), rtol=1e-9, atol=1e-12
            )
            # Entropy-term gradient ignores rewards entirely.
            np.testing.assert_allclose(
                eg[key] - pg[key], eg1[key] - pg1[key], rtol=1e-9, atol=1e-14
            )

    # Loss terms themselves: policy doubles, value quadruples, entropy holds.
    def loss_for(w, rets):
        value, _ = forward(params, MINI, frames, nonvis)
        return surrogate_loss(params, MINI, frames, nonvis, actions, rets,
                              rets - value, w)

    p1 = loss_for(policy_only, returns)
    p2 = loss_for(policy_only, 2 * returns)
    assert p2 == pytest.approx(2 * p1, rel=1e-12)
    v1 = loss_for(with_value, returns) - p1
    v2 = loss_for(with_value, 2 * returns) - p2
    assert v2 == pytest.approx(4 * v1, rel=1e-12)
    e1 = loss_for(with_entropy, returns) - p1
    e2 = loss_for(with_entropy, 2 * returns) - p2
    assert e2 == pytest.approx(e1, rel=1e-12)


def test_backward_reports_offending_step_on_non_finite():
    rng = np.random.default_rng(3)
    params = init_params(MINI, rng)
    frames, nonvis = random_inputs(MINI, rng, batch=5)
    frames[3] = np.nan
    with pytest.raises(NonFiniteGradient) as exc:
        backward(params, MINI, frames, nonvis, np.zeros(5, dtype=int),
                 np.zeros(5), LossWeights(), chunk=2)
    assert exc.value.step == 2  # the chunk containing step 3 starts at 2


def test_chunked_backward_matches_unchunked():
    rng = np.random.default_rng(12)
    params = init_params(MINI, rng)
    frames, nonvis = random_inputs(MINI, rng, batch=7)
    actions = rng.integers(0, 3, size=7)
    returns = rng.uniform(-1, 1, size=7)
    g1, _ = backward(params, MINI, frames, nonvis, actions, returns, LossWeights(), chunk=2)
    g2, _ = backward(params, MINI, frames, nonvis, actions, returns, LossWeights(), chunk=100)
    for key in param_keys(MINI):
        np.testing.assert_allclose(g1[key], g2[key], rtol=1e-9, atol=1e-12)


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([0.0])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(1.0)
    same, norm2 = clip_global_norm(grads, 10.0)
    assert norm2 == 5.0
    np.testing.assert_array_equal(same["a"], grads["a"])
