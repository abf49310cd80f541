"""Actor-critic network: plain numpy forward and backward passes.

The network is small enough that a hand-written float64 implementation is
preferable to a framework dependency: checkpoints round-trip bit-exactly,
single-worker runs are reproducible to the bit, and the backward pass can be
validated against central finite differences of the scalar loss.

Architecture: stacked input frames on the channel axis -> two valid
convolutions with rectifier activations -> flatten, concatenated with the
non-visual feature vector -> one rectified hidden layer -> a linear value
head and a softmax policy head.

Summation order is fixed (im2col patches in row-major position order,
batch-major matmuls, parameters in key order), so identical inputs produce
identical outputs on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Input or gradient shapes do not match the network configuration."""


class NonFiniteGradient(RuntimeError):
    """A gradient turned non-finite; carries the offending step index."""

    def __init__(self, step: int, key: str):
        super().__init__(f"non-finite gradient at trajectory step {step} (param {key})")
        self.step = step


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int  # stacked frames * semantic channels
    in_hw: int = 84
    conv: tuple[tuple[int, int, int], ...] = ((16, 8, 4), (32, 4, 2))  # (filters, kernel, stride)
    hidden: int = 256
    nonvisual_dim: int = 6
    n_actions: int = 3

    def conv_shapes(self) -> list[tuple[int, int]]:
        """(channels, spatial size) after each conv layer."""
        shapes = [(self.in_channels, self.in_hw)]
        for f, k, s in self.conv:
            hw = (shapes[-1][1] - k) // s + 1
            if hw < 1:
                raise ShapeError(f"conv chain collapses below 1x1: {self}")
            shapes.append((f, hw))
        return shapes

    @property
    def flat_dim(self) -> int:
        c, hw = self.conv_shapes()[-1]
        return c * hw * hw


def active_network_config(grid_n: int = 84, n_frames: int = 4) -> NetworkConfig:
    return NetworkConfig(in_channels=n_frames * 4, in_hw=grid_n, nonvisual_dim=6)


def passive_network_config(grid_n: int = 84, n_frames: int = 4) -> NetworkConfig:
    return NetworkConfig(in_channels=n_frames * 3, in_hw=grid_n, nonvisual_dim=4)


def mini_network_config(n_channels: int = 4, n_frames: int = 4) -> NetworkConfig:
    """Tiny profile (8x8 input, 2 filters per layer) for fast experiments
    and finite-difference verification."""
    return NetworkConfig(
        in_channels=n_frames * n_channels,
        in_hw=8,
        conv=((2, 4, 2), (2, 2, 1)),
        hidden=32,
        nonvisual_dim=6 if n_channels == 4 else 4,
    )


def param_keys(cfg: NetworkConfig) -> list[str]:
    keys = []
    for i in range(len(cfg.conv)):
        keys += [f"conv{i}_w", f"conv{i}_b"]
    keys += ["fc_w", "fc_b", "value_w", "value_b", "policy_w", "policy_b"]
    return keys


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> Params:
    """He-scaled normal weights, zero biases, drawn in key order."""
    params: Params = {}
    shapes = cfg.conv_shapes()
    for i, (f, k, _s) in enumerate(cfg.conv):
        c_in = shapes[i][0]
        fan_in = c_in * k * k
        params[f"conv{i}_w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(f, c_in, k, k))
        params[f"conv{i}_b"] = np.zeros(f)
    fc_in = cfg.flat_dim + cfg.nonvisual_dim
    params["fc_w"] = rng.normal(0.0, np.sqrt(2.0 / fc_in), size=(cfg.hidden, fc_in))
    params["fc_b"] = np.zeros(cfg.hidden)
    params["value_w"] = rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=(1, cfg.hidden))
    params["value_b"] = np.zeros(1)
    params["policy_w"] = rng.normal(
        0.0, np.sqrt(1.0 / cfg.hidden), size=(cfg.n_actions, cfg.hidden)
    )
    params["policy_b"] = np.zeros(cfg.n_actions)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params, writeable: bool = True) -> Params:
    out = {}
    for k, v in params.items():
        c = v.copy()
        c.flags.writeable = writeable
        out[k] = c
    return out


def _im2col(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(B, C, H, W) -> (B, P, C*k*k) patches in row-major position order."""
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k), ho, wo


def _conv_forward(x, w, b, stride):
    f = w.shape[0]
    k = w.shape[2]
    cols, ho, wo = _im2col(x, k, stride)
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(x.shape[0], ho, wo, f).transpose(0, 3, 1, 2), cols


def _col2im(dcols, x_shape, k, s, ho, wo):
    b, c, h, w = x_shape
    dx = np.zeros(x_shape)
    d6 = dcols.reshape(b, ho, wo, c, k, k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += d6[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    return dx


def _check_inputs(cfg: NetworkConfig, frames: np.ndarray, nonvisual: np.ndarray):
    if frames.shape[1:] != (cfg.in_channels, cfg.in_hw, cfg.in_hw):
        raise ShapeError(
            f"frame input {frames.shape} does not match "
            f"(B, {cfg.in_channels}, {cfg.in_hw}, {cfg.in_hw})"
        )
    if nonvisual.shape != (frames.shape[0], cfg.nonvisual_dim):
        raise ShapeError(
            f"non-visual input {nonvisual.shape} does not match (B, {cfg.nonvisual_dim})"
        )


def _forward_cached(params: Params, cfg: NetworkConfig, frames, nonvisual):
    x = np.asarray(frames, dtype=float)
    nv = np.asarray(nonvisual, dtype=float)
    if x.ndim == 3:
        x = x[None]
        nv = nv[None]
    _check_inputs(cfg, x, nv)
    cache = {"inputs": [], "cols": [], "pre": []}
    h = x
    for i, (_f, _k, s) in enumerate(cfg.conv):
        cache["inputs"].append(h)
        out, cols = _conv_forward(h, params[f"conv{i}_w"], params[f"conv{i}_b"], s)
        cache["cols"].append(cols)
        cache["pre"].append(out)
        h = np.maximum(out, 0.0)
    flat = h.reshape(h.shape[0], -1)
    fc_in = np.concatenate([flat, nv], axis=1)
    fc_pre = fc_in @ params["fc_w"].T + params["fc_b"]
    hidden = np.maximum(fc_pre, 0.0)
    value = (hidden @ params["value_w"].T + params["value_b"])[:, 0]
    logits = hidden @ params["policy_w"].T + params["policy_b"]
    zmax = logits.max(axis=1, keepdims=True)
    logz = zmax + np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
    log_policy = logits - logz
    policy = np.exp(log_policy)
    cache.update(
        fc_in=fc_in, fc_pre=fc_pre, hidden=hidden, value=value,
        log_policy=log_policy, policy=policy,
    )
    return value, policy, cache


def forward(
    params: Params, cfg: NetworkConfig, frames: np.ndarray, nonvisual: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """State value and action probabilities.

    Accepts a single sample (C, H, W) or a batch (B, C, H, W); returns
    matching scalars/vectors or batched arrays.
    """
    single = np.asarray(frames).ndim == 3
    value, policy, _ = _forward_cached(params, cfg, frames, nonvisual)
    if single:
        return float(value[0]), policy[0]
    return value, policy


def sample_action(policy: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw; index order matches the action enums."""
    if policy.ndim != 1 or policy.min() < 0 or abs(policy.sum() - 1.0) > 1e-6:
        raise ValueError(f"not a probability vector: {policy}")
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(policy), u, side="right"), len(policy) - 1))


@dataclass(frozen=True)
class LossWeights:
    value_loss_weight: float = 0.5
    entropy_beta: float = 0.01


def surrogate_loss(
    params: Params,
    cfg: NetworkConfig,
    frames: np.ndarray,
    nonvisual: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    advantages_const: np.ndarray,
    w: LossWeights,
) -> float:
    """Scalar training loss with the advantages held constant.

    Sum over steps of -log pi(a_t) * A_t + w_v * (R_t - V_t)^2 - beta * H(pi_t),
    where A_t is the supplied constant (the policy term does not
    differentiate through the baseline). This is the exact function the
    backward pass differentiates, which makes finite-difference checks valid.
    """
    value, policy, cache = _forward_cached(params, cfg, frames, nonvisual)
    lp = cache["log_policy"]
    idx = np.arange(len(actions))
    entropy = -(policy * lp).sum(axis=1)
    loss = (
        -(lp[idx, actions] * advantages_const).sum()
        + w.value_loss_weight * ((returns - value) ** 2).sum()
        - w.entropy_beta * entropy.sum()
    )
    return float(loss)


def backward(
    params: Params,
    cfg: NetworkConfig,
    frames: np.ndarray,
    nonvisual: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    w: LossWeights,
    chunk: int = 16,
) -> tuple[Params, np.ndarray]:
    """Gradients of the training loss over a trajectory batch.

    Advantages R_t - V_t are computed here from the current value head and
    treated as constants in the policy term. Returns (gradients, advantages).
    Processes the batch in chunks to bound im2col memory; chunking only
    changes float summation order below the 1e-9 level for these sizes.
    """
    frames = np.asarray(frames, dtype=float)
    nonvisual = np.asarray(nonvisual, dtype=float)
    actions = np.asarray(actions)
    returns = np.asarray(returns, dtype=float)
    grads = zeros_like_params(params)
    advantages = np.empty(len(actions))
    for lo in range(0, len(actions), chunk):
        hi = min(lo + chunk, len(actions))
        adv = _backward_chunk(
            params, cfg, frames[lo:hi], nonvisual[lo:hi], actions[lo:hi],
            returns[lo:hi], w, grads, step_offset=lo,
        )
        advantages[lo:hi] = adv
    return grads, advantages


def _backward_chunk(params, cfg, frames, nonvisual, actions, returns, w, grads, step_offset):
    value, policy, cache = _forward_cached(params, cfg, frames, nonvisual)
    lp = cache["log_policy"]
    hidden = cache["hidden"]
    b = len(actions)
    idx = np.arange(b)
    adv = returns - value
    entropy = -(policy * lp).sum(axis=1)

    dlogits = adv[:, None] * (policy - _one_hot(actions, cfg.n_actions))
    dlogits += w.entropy_beta * policy * (lp + entropy[:, None])
    dvalue = -2.0 * w.value_loss_weight * adv

    grads["policy_w"] += dlogits.T @ hidden
    grads["policy_b"] += dlogits.sum(axis=0)
    grads["value_w"] += dvalue[None, :] @ hidden
    grads["value_b"] += np.array([dvalue.sum()])

    dhidden = dlogits @ params["policy_w"] + dvalue[:, None] @ params["value_w"]
    dfc_pre = dhidden * (cache["fc_pre"] > 0.0)
    grads["fc_w"] += dfc_pre.T @ cache["fc_in"]
    grads["fc_b"] += dfc_pre.sum(axis=0)

    dfc_in = dfc_pre @ params["fc_w"]
    dflat = dfc_in[:, : cfg.flat_dim]
    shapes = cfg.conv_shapes()
    c_out, hw_out = shapes[-1]
    dh = dflat.reshape(b, c_out, hw_out, hw_out)
    for i in reversed(range(len(cfg.conv))):
        f, k, s = cfg.conv[i]
        pre = cache["pre"][i]
        dpre = dh * (pre > 0.0)
        dout_r = dpre.transpose(0, 2, 3, 1).reshape(b, -1, f)
        cols = cache["cols"][i]
        grads[f"conv{i}_w"] += np.einsum("bpf,bpc->fc", dout_r, cols).reshape(
            params[f"conv{i}_w"].shape
        )
        grads[f"conv{i}_b"] += dout_r.sum(axis=(0, 1))
        if i > 0:
            dcols = dout_r @ params[f"conv{i}_w"].reshape(f, -1)
            ho = wo = pre.shape[2]
            dh = _col2im(dcols, cache["inputs"][i].shape, k, s, ho, wo)

    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(step_offset, key)
    return adv


def _one_hot(actions: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(actions), n))
    out[np.arange(len(actions)), actions] = 1.0
    return out


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))


def clip_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm
