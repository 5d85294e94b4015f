"""Distillation and refinement: DAgger training of the flow policy from
scripted experts, residual action composition, elitist evolution-strategy
refinement of a residual policy under actuation constraints, and closed-loop
policy evaluation.

The DAgger loop rolls out the *current* student (so training states match the
deployment distribution), labels every visited state with the expert action,
and fits the flow-matching objective on the freshly collected buffer. The
buffer is cleared each iteration by default; pass accumulate=True in the
config for the classical aggregating variant.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow, metrics
from .env import ArmEnv, ExpertPolicy, expert_action
from .errors import CheckpointError, ConfigError, DimensionError, ValidationError
from .flow import (AdamState, FMBatch, SamplerCfg, VelocityFieldNet, adam_step,
                   clone_net, euler_sample, fm_loss_and_grad, mlp_forward,
                   mlp_init, mlp_zeros)
from .motion import MotionClip, finite_difference, segment_clips


class ReplayBuffer:
    """Flat store of (observation, motion id, expert action) records."""

    def __init__(self):
        self.observations: list[np.ndarray] = []
        self.motion_ids: list[int] = []
        self.expert_actions: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.observations)

    def clear(self) -> None:
        self.observations.clear()
        self.motion_ids.clear()
        self.expert_actions.clear()

    def add(self, obs, motion_id: int, a_expert) -> None:
        self.observations.append(np.asarray(obs, dtype=float))
        self.motion_ids.append(int(motion_id))
        self.expert_actions.append(np.asarray(a_expert, dtype=float))

    def sample_batch(self, batch_size: int, rng) -> FMBatch:
        if not self.observations:
            raise ValidationError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self.observations), size=min(batch_size, len(self)))
        obs = np.stack([self.observations[i] for i in idx])
        act = np.stack([self.expert_actions[i] for i in idx])
        return FMBatch(obs, act)


@dataclass(frozen=True)
class DistillCfg:
    iterations: int = 12
    episodes_per_iter: int = 4
    gradient_steps: int = 150
    batch_size: int = 128
    learning_rate: float = 2e-3
    lr_decay: float = 1.0  # per-iteration geometric decay
    sampler: SamplerCfg = field(default_factory=SamplerCfg)
    seed: int = 0
    accumulate: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        for name in ("episodes_per_iter", "gradient_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValidationError("lr_decay must be in (0, 1]")


def dagger_train(env: ArmEnv, experts: list[ExpertPolicy], motions: list[MotionClip],
                 net: VelocityFieldNet, cfg: DistillCfg,
                 buffer: ReplayBuffer | None = None, on_iteration=None):
    """Distill the experts into `net`; returns (trained net, per-iter losses).

    Each iteration: clear the buffer, roll out the current student on sampled
    motions while labelling visited states with the matching expert, then run
    `gradient_steps` flow-matching updates on buffer minibatches.
    `on_iteration(index, net, mean_loss)`, when given, is called after every
    iteration (checkpointing hook).
    """
    if len(experts) != len(motions):
        raise ConfigError(f"{len(motions)} motions but {len(experts)} experts")
    for expert, motion in zip(experts, motions):
        if expert.motion is not motion and not expert.motion.allclose(motion):
            raise ConfigError("expert/motion lists are misaligned")
    net = clone_net(net)
    rng = np.random.default_rng(cfg.seed)
    buffer = buffer if buffer is not None else ReplayBuffer()
    opt_state = AdamState()
    losses: list[float] = []
    for it in range(cfg.iterations):
        if not cfg.accumulate:
            buffer.clear()
        for _ in range(cfg.episodes_per_iter):
            m = int(rng.integers(len(motions)))
            obs = env.reset(motions[m], rng, mode="base")
            done = False
            while not done:
                a_exp = expert_action(experts[m], env)
                buffer.add(obs, m, a_exp)
                a = euler_sample(net, obs, cfg.sampler, rng)
                obs, _, done, _ = env.step(a)
        lr = cfg.learning_rate * cfg.lr_decay ** it
        iter_losses = []
        for _ in range(cfg.gradient_steps):
            batch = buffer.sample_batch(cfg.batch_size, rng)
            loss, grads = fm_loss_and_grad(net, batch, rng)
            net.params, opt_state = adam_step(net.params, grads, opt_state, lr=lr)
            iter_losses.append(loss)
        losses.append(float(np.mean(iter_losses)))
        if on_iteration is not None:
            on_iteration(it, net, losses[-1])
    return net, losses


# ---------------------------------------------------------------------------
# Residual policy.

@dataclass
class ResidualPolicy:
    """Small MLP producing a bounded corrective action.

    Input is [proprio (with previous *total* action), command, base action];
    the output is clamped to +/- bound before being added to the base action.
    The final layer starts at zero so a fresh residual leaves the base policy
    unchanged.
    """

    proprio_dim: int
    command_dim: int
    action_dim: int
    hidden: tuple[int, ...] = (32,)
    bound: float = 0.3
    params: list = field(default_factory=list)

    def __post_init__(self):
        if self.bound < 0:
            raise ValidationError("residual bound must be non-negative")
        if not self.params:
            self.params = mlp_zeros(self.layer_sizes)
        sizes = self.layer_sizes
        for i, (W, b) in enumerate(self.params):
            if W.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise DimensionError(f"residual layer {i} inconsistent with {sizes}")

    @property
    def input_dim(self) -> int:
        return self.proprio_dim + self.command_dim + self.action_dim

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.action_dim]


def init_residual(env: ArmEnv, hidden=(32,), bound: float = 0.3, rng=None) -> ResidualPolicy:
    """Residual with random hidden layers and a zero output layer."""
    res = ResidualPolicy(env.proprio_dim, env.command_dim, env.n_joints,
                         tuple(hidden), bound)
    if rng is not None:
        params = mlp_init(res.layer_sizes, rng)
        W_last, b_last = params[-1]
        params[-1] = (np.zeros_like(W_last), np.zeros_like(b_last))
        res.params = params
    return res


def residual_input(env: ArmEnv, a_flow) -> np.ndarray:
    env._require_episode()
    proprio = np.concatenate([
        env.q - env.q0, env.qdot, env._prev_action_total])
    return np.concatenate([proprio, env.command(), np.asarray(a_flow, dtype=float)])


def residual_action(res: ResidualPolicy, env: ArmEnv, a_flow) -> np.ndarray:
    x = residual_input(env, a_flow)
    raw = mlp_forward(res.params, x[None, :])[0]
    return np.clip(raw, -res.bound, res.bound)


def residual_compose(a_flow, a_res, bound: float) -> np.ndarray:
    """Refined action: base plus the residual clamped to +/- bound."""
    a_flow = np.asarray(a_flow, dtype=float)
    a_res = np.asarray(a_res, dtype=float)
    if a_flow.shape != a_res.shape:
        raise DimensionError(f"action shapes differ: {a_flow.shape} vs {a_res.shape}")
    return a_flow + np.clip(a_res, -bound, bound)


def _flatten(params: list) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])


def _unflatten(vector: np.ndarray, template: list) -> list:
    out, i = [], 0
    for W, b in template:
        w = vector[i:i + W.size].reshape(W.shape)
        i += W.size
        bb = vector[i:i + b.size]
        i += b.size
        out.append((w.copy(), bb.copy()))
    return out


@dataclass(frozen=True)
class ESCfg:
    """(1+lambda) evolution strategy over residual parameters."""

    generations: int = 30
    population: int = 8
    sigma: float = 0.05
    episodes_per_eval: int = 3
    seed: int = 0
    termination_floor: float = -1.0  # per missing step after early termination

    def __post_init__(self):
        if self.generations < 0 or self.population < 0:
            raise ValidationError("generations and population must be >= 0")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if self.episodes_per_eval < 1:
            raise ValidationError("episodes_per_eval must be positive")


def rollout_episode(env: ArmEnv, net: VelocityFieldNet, motion: MotionClip, seed: int,
                    residual: ResidualPolicy | None = None, mode: str = "base",
                    sampler: SamplerCfg | None = None):
    """One seeded closed-loop episode; returns a log dict.

    The env and the policy's noise draws get independent child seeds so the
    same episode seed reproduces the same trajectory for identical policies.
    """
    sampler = sampler or SamplerCfg()
    seq = np.random.SeedSequence(seed)
    env_seed, policy_seed = seq.spawn(2)
    policy_rng = np.random.default_rng(policy_seed)
    obs = env.reset(motion, np.random.default_rng(env_seed), mode=mode)
    rewards, infos = [], []
    bodies, ref_bodies = [], []
    done = False
    while not done:
        a_flow = euler_sample(net, obs, sampler, policy_rng)
        if residual is not None:
            a_res = residual_action(residual, env, a_flow)
            a = residual_compose(a_flow, a_res, residual.bound)
        else:
            a = a_flow
        obs, r, done, info = env.step(a, base_action=a_flow)
        rewards.append(r)
        bodies.append(info["body_pos"])
        ref_bodies.append(info["ref_body_pos"])
        infos.append(info)
    last = infos[-1]
    return {
        "rewards": np.array(rewards),
        "body_pos": np.stack(bodies),
        "ref_body_pos": np.stack(ref_bodies),
        "terminated_early": last["terminated_early"],
        "steps": len(rewards),
        "infos": infos,
    }


def episode_return(log, episode_len: int, floor: float) -> float:
    """Episode reward total with missing steps charged at the floor value."""
    missing = episode_len - log["steps"]
    return float(np.sum(log["rewards"]) + floor * missing)


def es_refine(net: VelocityFieldNet, residual: ResidualPolicy, env: ArmEnv,
              motion: MotionClip, cfg: ESCfg,
              sampler: SamplerCfg | None = None):
    """Elitist (1+lambda) ES on the residual parameters; rewards use the
    aggressive env mode. Returns (refined residual, best-reward history).

    Every candidate is scored on the same seeded episode set (common random
    numbers), so the recorded best reward never decreases.
    """
    sampler = sampler or SamplerCfg()
    rng = np.random.default_rng(cfg.seed)
    eval_seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=cfg.episodes_per_eval)]

    def fitness(candidate: ResidualPolicy) -> float:
        totals = []
        for s in eval_seeds:
            log = rollout_episode(env, net, motion, s, residual=candidate,
                                  mode="aggressive", sampler=sampler)
            totals.append(episode_return(log, env.episode_len, cfg.termination_floor))
        return float(np.mean(totals))

    best = replace(residual, params=[(W.copy(), b.copy()) for W, b in residual.params])
    theta_best = _flatten(best.params)
    f_best = fitness(best)
    history = [f_best]
    for _ in range(cfg.generations):
        for _ in range(cfg.population):
            theta = theta_best + cfg.sigma * rng.standard_normal(theta_best.shape)
            candidate = replace(best, params=_unflatten(theta, best.params))
            f = fitness(candidate)
            if f > f_best:
                f_best, theta_best = f, theta
        history.append(f_best)
    best = replace(best, params=_unflatten(theta_best, best.params))
    return best, history


# ---------------------------------------------------------------------------
# Evaluation.

def evaluate_policy(net: VelocityFieldNet, env: ArmEnv, motions: dict | list,
                    residual: ResidualPolicy | None = None, n_rollouts: int = 10,
                    seed: int = 0, segment_seconds: float = 10.0,
                    sampler: SamplerCfg | None = None) -> dict:
    """Closed-loop tracking metrics per motion.

    Motions are segmented into fixed-length clips first; each clip runs
    `n_rollouts` seeded episodes. MPJPE / velocity / acceleration errors are
    averaged within each episode first, then across episodes, then across a
    motion's clips (never pooled over frames of unequal episodes).
    """
    sampler = sampler or SamplerCfg()
    if isinstance(motions, dict):
        named = list(motions.items())
    else:
        named = [(f"motion_{i}", m) for i, m in enumerate(motions)]
    results = {}
    for name, motion in named:
        clips = segment_clips(motion, segment_seconds)
        clip_metrics = []
        for ci, clip in enumerate(clips):
            per_episode = {"mpjpe": [], "dvel": [], "dacc": [], "success": []}
            for r in range(n_rollouts):
                ep_seed = hash_seed(seed, name, ci, r)
                log = rollout_episode(env, net, clip, ep_seed, residual=residual,
                                      sampler=sampler)
                ref, rob = log["ref_body_pos"], log["body_pos"]
                per_episode["success"].append(not log["terminated_early"])
                per_episode["mpjpe"].append(metrics.mpjpe(ref, rob))
                if log["steps"] >= 3:
                    ref_v = finite_difference(ref, env.dt)
                    rob_v = finite_difference(rob, env.dt)
                    per_episode["dvel"].append(metrics.delta_vel(ref_v, rob_v, env.dt))
                    per_episode["dacc"].append(metrics.delta_acc(ref_v, rob_v, env.dt))
            clip_metrics.append(metrics.TrackingMetrics(
                mpjpe_mm=aggregate_per_episode(per_episode["mpjpe"]),
                dvel=aggregate_per_episode(per_episode["dvel"]) if per_episode["dvel"] else 0.0,
                dacc=aggregate_per_episode(per_episode["dacc"]) if per_episode["dacc"] else 0.0,
                success=float(np.mean(per_episode["success"])),
                n_episodes=n_rollouts,
            ))
        results[name] = metrics.TrackingMetrics(
            mpjpe_mm=float(np.mean([m.mpjpe_mm for m in clip_metrics])),
            dvel=float(np.mean([m.dvel for m in clip_metrics])),
            dacc=float(np.mean([m.dacc for m in clip_metrics])),
            success=float(np.mean([m.success for m in clip_metrics])),
            n_episodes=sum(m.n_episodes for m in clip_metrics),
        )
    return results


def aggregate_per_episode(values) -> float:
    """Episode-level metric aggregation: plain mean over per-episode values.

    Kept as a named helper because the order matters: per-episode means are
    averaged, never pooled over the frames of unequal-length episodes.
    """
    return float(np.mean(values))


def hash_seed(*parts) -> int:
    """Deterministic 31-bit seed from mixed parts (no Python hash salt)."""
    acc = 2166136261
    for part in parts:
        for byte in str(part).encode():
            acc = (acc ^ byte) * 16777619 % (2 ** 32)
    return acc % (2 ** 31)


def closed_loop_joint_error(env: ArmEnv, net: VelocityFieldNet, motion: MotionClip,
                            seed: int, residual: ResidualPolicy | None = None,
                            sampler: SamplerCfg | None = None) -> float:
    """Mean per-step joint tracking error of a seeded episode (rad)."""
    log = rollout_episode(env, net, motion, seed, residual=residual, sampler=sampler)
    errs = [info["q_err"] for info in log["infos"]]
    missing = env.episode_len - log["steps"]
    if missing:  # charge un-run steps at a worst-case error so dying never helps
        errs = errs + [np.pi] * missing
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Residual checkpoints.

def save_residual(res: ResidualPolicy, path) -> None:
    doc = {
        "version": flow.CHECKPOINT_VERSION,
        "kind": "residual",
        "proprio_dim": res.proprio_dim,
        "command_dim": res.command_dim,
        "action_dim": res.action_dim,
        "hidden": list(res.hidden),
        "bound": res.bound,
        "layer_shapes": [list(W.shape) for W, _ in res.params],
        "params": [[W.tolist(), b.tolist()] for W, b in res.params],
    }
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_residual(path) -> ResidualPolicy:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("version", "kind", "proprio_dim", "command_dim", "action_dim",
                "hidden", "bound", "layer_shapes", "params"):
        if key not in doc:
            raise CheckpointError(f"{path}: missing checkpoint key '{key}'")
    if doc["version"] != flow.CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc['version']}")
    if doc["kind"] != "residual":
        raise CheckpointError(f"{path}: not a residual checkpoint ({doc['kind']})")
    params = []
    for (shape, (W, b)) in zip(doc["layer_shapes"], doc["params"], strict=True):
        W = np.array(W, dtype=float)
        b = np.array(b, dtype=float)
        if list(W.shape) != list(shape) or b.shape != (shape[0],):
            raise CheckpointError(f"{path}: parameter block does not match header")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise CheckpointError(f"{path}: non-finite parameters")
        params.append((W, b))
    try:
        return ResidualPolicy(
            proprio_dim=int(doc["proprio_dim"]),
            command_dim=int(doc["command_dim"]),
            action_dim=int(doc["action_dim"]),
            hidden=tuple(int(h) for h in doc["hidden"]),
            bound=float(doc["bound"]),
            params=params,
        )
    except (DimensionError, ValidationError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
