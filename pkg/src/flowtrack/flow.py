"""Flow-matching policy core: velocity-field network, training loss with exact
analytic gradients, Beta timestep sampling, reverse-time Euler action
sampling, Adam, and checkpoint serialization.

The network regresses the straight-line transport direction u = eps - a_expert
at interpolated points a_t = (1 - t) * a_expert + t * eps; actions are drawn
by integrating the learned field from Gaussian noise at t = 1 down to t = 0.
Everything runs in double precision so finite-difference gradient checks stay
tight. The only nonlinearity used repo-wide is tanh.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CheckpointError, DimensionError, ValidationError

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Plain MLP machinery (shared with the residual policy in distill).

def mlp_init(sizes, rng) -> list:
    """He-style tanh init: W ~ N(0, 1/fan_in), zero biases. sizes = [in, ..., out]."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        params.append((W, np.zeros(fan_out)))
    return params


def mlp_zeros(sizes) -> list:
    return [(np.zeros((o, i)), np.zeros(o)) for i, o in zip(sizes[:-1], sizes[1:])]


def mlp_forward(params, x: np.ndarray) -> np.ndarray:
    """Forward pass; hidden layers tanh, final layer linear. x: (N, in)."""
    h = x
    for W, b in params[:-1]:
        h = np.tanh(h @ W.T + b)
    W, b = params[-1]
    return h @ W.T + b


def _mlp_forward_cached(params, x):
    acts = [x]
    h = x
    for W, b in params[:-1]:
        h = np.tanh(h @ W.T + b)
        acts.append(h)
    W, b = params[-1]
    return h @ W.T + b, acts


def _mlp_backward(params, acts, d_out):
    """Gradients of all (W, b) given d(loss)/d(output); returns same structure."""
    grads = [None] * len(params)
    d = d_out
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        a_prev = acts[layer]
        grads[layer] = (d.T @ a_prev, d.sum(axis=0))
        if layer > 0:
            d = (d @ W) * (1.0 - acts[layer] ** 2)
    return grads


# ---------------------------------------------------------------------------
# Velocity-field network.

@dataclass
class VelocityFieldNet:
    """Feedforward velocity field v(a_t, t, obs) with sinusoidal time embedding.

    Input layout is [a_t, time_embed(t), obs]; output dim equals action_dim.
    """

    action_dim: int
    obs_dim: int
    hidden: tuple[int, ...] = (256, 256)
    time_embed_dim: int = 8
    alpha: float = 1.5
    beta: float = 1.0
    params: list = field(default_factory=list)

    def __post_init__(self):
        if self.time_embed_dim % 2 != 0 or self.time_embed_dim <= 0:
            raise ValidationError("time_embed_dim must be a positive even number")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("Beta shape parameters must be positive")
        if not self.params:
            self.params = mlp_zeros(self.layer_sizes)
        self._check_shapes()

    @property
    def input_dim(self) -> int:
        return self.action_dim + self.time_embed_dim + self.obs_dim

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.action_dim]

    def _check_shapes(self):
        sizes = self.layer_sizes
        if len(self.params) != len(sizes) - 1:
            raise DimensionError(
                f"expected {len(sizes) - 1} layers, got {len(self.params)}"
            )
        for i, (W, b) in enumerate(self.params):
            if W.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise DimensionError(
                    f"layer {i} shape {W.shape}/{b.shape} inconsistent with {sizes}"
                )

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.params)


def init_net(action_dim: int, obs_dim: int, hidden=(256, 256), time_embed_dim: int = 8,
             alpha: float = 1.5, beta: float = 1.0, rng=None) -> VelocityFieldNet:
    """Randomly initialized velocity field (zero-initialized when rng is None)."""
    net = VelocityFieldNet(action_dim, obs_dim, tuple(hidden), time_embed_dim, alpha, beta)
    if rng is not None:
        net.params = mlp_init(net.layer_sizes, rng)
    return net


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features [sin(pi 4^k t), cos(pi 4^k t)], k = 0..dim/2-1.

    The geometric frequency ladder reaches high enough to resolve the small-t
    region where the straight-line field is steepest.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(dim // 2)
    ang = np.pi * (4.0 ** k) * t[:, None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _assemble_input(net: VelocityFieldNet, a, t, obs):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if a.shape[1] != net.action_dim:
        raise DimensionError(f"action dim {a.shape[1]} != net action dim {net.action_dim}")
    if obs.shape[1] != net.obs_dim:
        raise DimensionError(f"obs dim {obs.shape[1]} != net obs dim {net.obs_dim}")
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (a.shape[0],))
    emb = time_embedding(t, net.time_embed_dim)
    return np.concatenate([a, emb, obs], axis=1)


def forward(net: VelocityFieldNet, a, t, obs) -> np.ndarray:
    """Evaluate the velocity field; returns the same leading shape as `a`."""
    single = np.asarray(a).ndim == 1
    out = mlp_forward(net.params, _assemble_input(net, a, t, obs))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Training objective.

@dataclass(frozen=True)
class FMBatch:
    """Paired (observation, expert action) rows for one gradient step."""

    observations: np.ndarray
    expert_actions: np.ndarray

    def __post_init__(self):
        obs = np.atleast_2d(np.asarray(self.observations, dtype=float))
        act = np.atleast_2d(np.asarray(self.expert_actions, dtype=float))
        if obs.shape[0] != act.shape[0]:
            raise DimensionError(f"row counts differ: {obs.shape[0]} vs {act.shape[0]}")
        if obs.shape[0] < 1:
            raise DimensionError("batch must be non-empty")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "expert_actions", act)

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass(frozen=True)
class SamplerCfg:
    """Euler-sampler and timestep-distribution configuration."""

    steps: int = 5
    alpha: float = 1.5
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("need at least one integration step")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("Beta shape parameters must be positive")


def sample_timestep(rng, alpha: float, beta: float):
    """Flow timestep t in [0, 1] drawn from Beta(alpha, beta)."""
    if alpha <= 0 or beta <= 0:
        raise ValidationError(f"Beta shapes must be positive, got {alpha}, {beta}")
    return rng.beta(alpha, beta)


def fm_loss(net: VelocityFieldNet, batch: FMBatch, t: np.ndarray, eps: np.ndarray) -> float:
    """Flow-matching loss for given noise draws (used by gradient oracles)."""
    a_t = (1.0 - t[:, None]) * batch.expert_actions + t[:, None] * eps
    u = eps - batch.expert_actions
    v = mlp_forward(net.params, _assemble_input(net, a_t, t, batch.observations))
    return float(np.mean(np.sum((v - u) ** 2, axis=1)))


def fm_loss_and_grad_at(net: VelocityFieldNet, batch: FMBatch, t: np.ndarray,
                        eps: np.ndarray) -> tuple[float, list]:
    """Loss and exact parameter gradients at fixed (t, eps) draws."""
    n = len(batch)
    a_t = (1.0 - t[:, None]) * batch.expert_actions + t[:, None] * eps
    u = eps - batch.expert_actions
    x = _assemble_input(net, a_t, t, batch.observations)
    v, acts = _mlp_forward_cached(net.params, x)
    resid = v - u
    loss = float(np.mean(np.sum(resid ** 2, axis=1)))
    grads = _mlp_backward(net.params, acts, 2.0 * resid / n)
    return loss, grads


def fm_loss_and_grad(net: VelocityFieldNet, batch: FMBatch, rng) -> tuple[float, list]:
    """Draw per-sample (t, eps) and return the loss with exact gradients."""
    n = len(batch)
    t = rng.beta(net.alpha, net.beta, size=n)
    eps = rng.standard_normal((n, net.action_dim))
    return fm_loss_and_grad_at(net, batch, t, eps)


# ---------------------------------------------------------------------------
# Action sampling.

def euler_sample(net: VelocityFieldNet, obs, cfg: SamplerCfg, rng) -> np.ndarray:
    """Integrate the field from Gaussian noise at t=1 to an action at t=0.

    x starts at N(0, I); each of the D steps applies x <- x - v(x, t, obs)/D
    at t = 1 - k/D.
    """
    D = cfg.steps
    x = rng.standard_normal(net.action_dim)
    for k in range(D):
        t = 1.0 - k / D
        x = x - forward(net, x, t, obs) / D
    return x


# ---------------------------------------------------------------------------
# Optimizer.

@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list, grads: list, state: AdamState, lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if len(params) != len(grads):
        raise DimensionError("params and grads disagree on layer count")
    if not state.m:
        state.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        state.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    b1, b2 = betas
    step = state.step + 1
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_params, new_m, new_v = [], [], []
    for (W, b), (gW, gb), (mW, mb), (vW, vb) in zip(params, grads, state.m, state.v):
        mW = b1 * mW + (1 - b1) * gW
        mb = b1 * mb + (1 - b1) * gb
        vW = b2 * vW + (1 - b2) * gW ** 2
        vb = b2 * vb + (1 - b2) * gb ** 2
        W = W - lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
        b = b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        new_params.append((W, b))
        new_m.append((mW, mb))
        new_v.append((vW, vb))
    return new_params, AdamState(step=step, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# Checkpoints.

def save_policy(net: VelocityFieldNet, path) -> None:
    """Serialize the net to JSON; parameters round-trip bit-exactly."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "kind": "velocity_field",
        "action_dim": net.action_dim,
        "obs_dim": net.obs_dim,
        "layer_shapes": [list(W.shape) for W, _ in net.params],
        "hidden": list(net.hidden),
        "time_embed_dim": net.time_embed_dim,
        "activation": "tanh",
        "alpha": net.alpha,
        "beta": net.beta,
        "params": [[W.tolist(), b.tolist()] for W, b in net.params],
    }
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_policy(path) -> VelocityFieldNet:
    """Load a checkpoint, validating version, shapes, and parameter count."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("version", "kind", "action_dim", "obs_dim", "layer_shapes",
                "hidden", "time_embed_dim", "activation", "alpha", "beta", "params"):
        if key not in doc:
            raise CheckpointError(f"{path}: missing checkpoint key '{key}'")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {doc['version']} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if doc["kind"] != "velocity_field":
        raise CheckpointError(f"{path}: not a velocity-field checkpoint ({doc['kind']})")
    if doc["activation"] != "tanh":
        raise CheckpointError(f"{path}: unknown activation '{doc['activation']}'")
    params = []
    for (shape, (W, b)) in zip(doc["layer_shapes"], doc["params"], strict=True):
        W = np.array(W, dtype=float)
        b = np.array(b, dtype=float)
        if list(W.shape) != list(shape) or b.shape != (shape[0],):
            raise CheckpointError(f"{path}: parameter block does not match header shape {shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise CheckpointError(f"{path}: non-finite parameters")
        params.append((W, b))
    try:
        net = VelocityFieldNet(
            action_dim=int(doc["action_dim"]),
            obs_dim=int(doc["obs_dim"]),
            hidden=tuple(int(h) for h in doc["hidden"]),
            time_embed_dim=int(doc["time_embed_dim"]),
            alpha=float(doc["alpha"]),
            beta=float(doc["beta"]),
            params=params,
        )
    except (DimensionError, ValidationError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
    return net


def clone_net(net: VelocityFieldNet) -> VelocityFieldNet:
    return replace(net, params=[(W.copy(), b.copy()) for W, b in net.params])
