"""Toy torque-controlled planar arm whose control loop mirrors the tracking
pipeline: policy action -> PD setpoint -> torque -> envelope clip -> friction
-> rigid-link dynamics at 50 Hz.

The arm is a serial chain of point masses at link endpoints swinging in the
x-z plane; joint angles are measured from the downward vertical. Control runs
at dt = 0.02 s; inside each control step the dynamics integrate semi-implicitly
over several substeps because the smoothed Coulomb friction term is stiff
(slope mu_s/v_act near zero velocity). Torque commands are re-clipped and
friction re-evaluated per substep; the values logged in `info` are the ones at
the pre-step state, which is what the actuation contract describes.

The arm has no floating base, so the torso-orientation term of the observation
and termination check is replaced by an end-effector direction error (angle of
the last link). That proxy is a stand-in, not a physical torso.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from . import actuation
from .actuation import ActuatorParams, PDGains, PowerPenaltyCfg
from .errors import ConfigError, NumericalBlowupError, ValidationError
from .metrics import TerminationThresholds, check_termination
from .motion import MotionClip, arm_forward_kinematics, finite_difference

CONTROL_DT = 0.02  # 50 Hz control rate


@dataclass(frozen=True)
class RandomizationCfg:
    """Per-episode and per-step randomization ranges (all symmetric).

    Aggressive mode multiplies every range by `aggressive_factor`.
    """

    pose_noise: float = 0.05       # rad on initial joint positions
    disturbance: float = 0.5       # N*m external torque per control step
    mass_scale: float = 0.10       # fractional link-mass scaling
    friction_scale: float = 0.20   # fractional mu_s / mu_d scaling
    q0_offset: float = 0.05        # rad offset on the PD default position
    aggressive_factor: float = 1.5

    def __post_init__(self):
        for name in ("pose_noise", "disturbance", "mass_scale", "friction_scale", "q0_offset"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.aggressive_factor < 1.0:
            raise ValidationError("aggressive_factor must be >= 1")

    def scaled(self, factor: float) -> "RandomizationCfg":
        return RandomizationCfg(
            pose_noise=self.pose_noise * factor,
            disturbance=self.disturbance * factor,
            mass_scale=self.mass_scale * factor,
            friction_scale=self.friction_scale * factor,
            q0_offset=self.q0_offset * factor,
            aggressive_factor=self.aggressive_factor,
        )


DEFAULT_ENV_CONFIG = {
    "links": [{"mass": 1.2, "length": 0.5}, {"mass": 1.0, "length": 0.4}],
    "gravity": 9.81,
    "actuators": ["5020-16", "5020-16"],
    "pd": {"f_hz": 10.0, "zeta": 2.0},
    "episode_len": 500,
    "n_substeps": 8,
    "history_len": 5,
    "envelope_scale": 1.0,
    "thresholds": {"z_err_max": 0.25, "grav_err_max": 0.8, "relax_factor": 1.5},
    "randomization": {
        "pose_noise": 0.05,
        "disturbance": 0.5,
        "mass_scale": 0.10,
        "friction_scale": 0.20,
        "q0_offset": 0.05,
        "aggressive_factor": 1.5,
    },
    "power_penalty": {"deadband": 150.0, "norm": 500.0, "weight": -10.0, "joints": None},
}


def load_env_config(path) -> dict:
    """Read an env config JSON file and merge it over the defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return merge_config(doc)


def merge_config(overrides: dict | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_ENV_CONFIG)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown env config key '{key}'")
        if isinstance(cfg[key], dict) and isinstance(value, dict):
            for sub, sval in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown env config key '{key}.{sub}'")
                cfg[key][sub] = sval
        else:
            cfg[key] = value
    return cfg


class ArmEnv:
    """N-joint torque-controlled pendulum arm tracking a reference motion."""

    def __init__(self, config: dict | None = None, catalog: dict | None = None):
        cfg = merge_config(config)
        if catalog is None:
            catalog = actuation.default_catalog()
        links = cfg["links"]
        if not links:
            raise ConfigError("need at least one link")
        self.n_joints = len(links)
        self.masses = np.array([float(l["mass"]) for l in links])
        self.lengths = np.array([float(l["length"]) for l in links])
        if np.any(self.masses <= 0) or np.any(self.lengths <= 0):
            raise ConfigError("link masses and lengths must be positive")
        self.gravity = float(cfg["gravity"])
        self.dt = CONTROL_DT
        self.n_substeps = int(cfg["n_substeps"])
        if self.n_substeps < 1:
            raise ConfigError("n_substeps must be >= 1")
        self.episode_len = int(cfg["episode_len"])
        self.history_len = int(cfg["history_len"])
        names = cfg["actuators"]
        if len(names) != self.n_joints:
            raise ConfigError(f"{self.n_joints} links but {len(names)} actuator names")
        scale = float(cfg["envelope_scale"])
        nominal: list[ActuatorParams] = []
        for name in names:
            if name not in catalog:
                raise ConfigError(f"unknown actuator '{name}' (catalog: {sorted(catalog)})")
            nominal.append(catalog[name])
        # PD gains come from the nominal catalog entry; envelope_scale only
        # weakens the physics, the controller is not told about it.
        pd = cfg["pd"]
        self.gains: list[PDGains] = [
            actuation.pd_gains(p, f_hz=float(pd["f_hz"]), zeta=float(pd["zeta"]))
            for p in nominal
        ]
        self.actuators = [p.scaled(torque_scale=scale) for p in nominal]
        self.kp = np.array([g.kp for g in self.gains])
        self.kd = np.array([g.kd for g in self.gains])
        self.action_scale = np.array([g.action_scale for g in self.gains])
        self.q0 = np.zeros(self.n_joints)  # nominal default pose: straight down
        thr = cfg["thresholds"]
        self.thresholds = TerminationThresholds(
            z_err_max=float(thr["z_err_max"]),
            grav_err_max=float(thr["grav_err_max"]),
            relax_factor=float(thr["relax_factor"]),
        )
        self.randomization = RandomizationCfg(**{
            k: float(v) for k, v in cfg["randomization"].items()
        })
        pp = cfg["power_penalty"]
        joints = pp.get("joints")
        self.power_cfg = PowerPenaltyCfg(
            deadband=float(pp["deadband"]),
            norm=float(pp["norm"]),
            weight=float(pp["weight"]),
            joint_selector=None if joints is None else tuple(int(j) for j in joints),
        )
        self.base_height = float(np.sum(self.lengths))
        self.config = cfg
        self._armature = np.array([p.armature_I for p in self.actuators])
        self._S = np.tril(np.ones((self.n_joints, self.n_joints)))
        self._episode_active = False

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, motion: MotionClip, rng, mode: str = "base") -> np.ndarray:
        """Start an episode on `motion`; returns the initial observation.

        `rng` is a numpy Generator or a seed. Aggressive mode widens every
        randomization range by `aggressive_factor` and relaxes the termination
        thresholds by `relax_factor`.
        """
        if mode not in ("base", "aggressive"):
            raise ValidationError(f"mode must be 'base' or 'aggressive', got '{mode}'")
        if motion.n_joints != self.n_joints:
            raise ValidationError(
                f"motion has {motion.n_joints} joints, env has {self.n_joints}"
            )
        if motion.n_bodies != self.n_joints:
            raise ValidationError(
                f"motion has {motion.n_bodies} bodies; expected one per link"
            )
        if abs(motion.fps * self.dt - 1.0) > 1e-9:
            raise ConfigError(f"motion fps {motion.fps} does not match 50 Hz control")
        self._rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self._mode = mode
        rand = self.randomization
        if mode == "aggressive":
            rand = rand.scaled(rand.aggressive_factor)
        self._rand = rand
        self.motion = motion
        self._ref_qdot = finite_difference(motion.q, self.dt)
        self._ref_qacc = finite_difference(self._ref_qdot, self.dt)
        # per-episode physical randomization
        self._masses_ep = self.masses * (1.0 + self._rng.uniform(
            -rand.mass_scale, rand.mass_scale, self.n_joints))
        fscale = 1.0 + self._rng.uniform(-rand.friction_scale, rand.friction_scale)
        self._actuators_ep = [p.scaled(friction_scale=fscale) for p in self.actuators]
        self._q0_eff = self.q0 + self._rng.uniform(
            -rand.q0_offset, rand.q0_offset, self.n_joints)
        self._mcum = np.cumsum(self._masses_ep[::-1])[::-1]
        self._c = np.outer(self.lengths, self.lengths) * self._mcum[
            np.maximum.outer(np.arange(self.n_joints), np.arange(self.n_joints))]
        pose_noise = self._rng.uniform(-rand.pose_noise, rand.pose_noise, self.n_joints)
        self._q = motion.q[0] + pose_noise
        self._qdot = self._ref_qdot[0].copy()
        self._step_count = 0
        self._prev_action_base = np.zeros(self.n_joints)
        self._prev_action_total = np.zeros(self.n_joints)
        self._episode_active = True
        self._done = False
        p0 = self._proprio(self._prev_action_base)
        self._hist = [p0.copy() for _ in range(self.history_len)]
        return self.build_observation()

    @property
    def q(self) -> np.ndarray:
        return self._q.copy()

    @property
    def qdot(self) -> np.ndarray:
        return self._qdot.copy()

    @property
    def step_count(self) -> int:
        return self._step_count

    @property
    def q0_eff(self) -> np.ndarray:
        return self._q0_eff.copy()

    def ref_frame(self, k: int | None = None) -> int:
        """Clamp a step index onto the reference clip (holds the last frame)."""
        if k is None:
            k = self._step_count
        return min(k, self.motion.n_frames - 1)

    # -- observation ---------------------------------------------------------

    def _proprio(self, prev_action) -> np.ndarray:
        return np.concatenate([self._q - self.q0, self._qdot, prev_action])

    def _tip_angle(self, q) -> float:
        return float(np.sum(q))

    def _direction_error(self) -> np.ndarray:
        """2-vector difference between reference and current tip directions."""
        th_ref = self._tip_angle(self.motion.q[self.ref_frame()])
        th = self._tip_angle(self._q)
        return np.array([np.cos(th_ref) - np.cos(th), np.sin(th_ref) - np.sin(th)])

    def command(self) -> np.ndarray:
        """Reference joint targets one frame ahead plus the direction error."""
        nxt = self.ref_frame(self._step_count + 1)
        return np.concatenate([
            self.motion.q[nxt], self._ref_qdot[nxt], self._direction_error(),
        ])

    def build_observation(self) -> np.ndarray:
        """obs = [proprio, command, history]; history holds the H most recent
        past proprio states, most recent first (filled with the initial state
        at reset)."""
        self._require_episode()
        p = self._proprio(self._prev_action_base)
        h = np.concatenate(self._hist[::-1]) if self._hist else np.zeros(0)
        return np.concatenate([p, self.command(), h])

    @property
    def proprio_dim(self) -> int:
        return 3 * self.n_joints

    @property
    def command_dim(self) -> int:
        return 2 * self.n_joints + 2

    @property
    def obs_dim(self) -> int:
        return self.proprio_dim + self.command_dim + self.history_len * self.proprio_dim

    # -- dynamics ------------------------------------------------------------

    def _qacc(self, q, qdot, tau) -> np.ndarray:
        theta = np.cumsum(q)
        thetadot = np.cumsum(qdot)
        dth = theta[:, None] - theta[None, :]
        M_abs = self._c * np.cos(dth)
        h_vec = (self._c * np.sin(dth)) @ (thetadot ** 2)
        G = self.gravity * self.lengths * self._mcum * np.sin(theta)
        M_q = self._S.T @ M_abs @ self._S + np.diag(self._armature)
        rhs = tau - self._S.T @ (h_vec + G)
        return np.linalg.solve(M_q, rhs)

    def gravity_torque(self, q) -> np.ndarray:
        """Joint torques that statically balance gravity at pose q."""
        theta = np.cumsum(q)
        G = self.gravity * self.lengths * self._mcum * np.sin(theta)
        return self._S.T @ G

    def inverse_dynamics(self, q, qdot, qacc) -> np.ndarray:
        """Joint torques that produce qacc at (q, qdot), gravity included."""
        theta = np.cumsum(q)
        thetadot = np.cumsum(qdot)
        dth = theta[:, None] - theta[None, :]
        M_abs = self._c * np.cos(dth)
        h_vec = (self._c * np.sin(dth)) @ (thetadot ** 2)
        G = self.gravity * self.lengths * self._mcum * np.sin(theta)
        M_q = self._S.T @ M_abs @ self._S + np.diag(self._armature)
        return M_q @ np.asarray(qacc, dtype=float) + self._S.T @ (h_vec + G)

    def body_positions(self, q=None) -> np.ndarray:
        """Link endpoint positions (J, 3) at the current (or given) pose."""
        return arm_forward_kinematics(
            self._q if q is None else q, self.lengths, self.base_height)

    def mechanical_energy(self) -> float:
        """Kinetic + gravitational potential energy of the episode's arm."""
        theta = np.cumsum(self._q)
        thetadot = np.cumsum(self._qdot)
        dth = theta[:, None] - theta[None, :]
        M_abs = self._c * np.cos(dth)
        ke = 0.5 * thetadot @ M_abs @ thetadot + 0.5 * np.sum(self._armature * self._qdot ** 2)
        z = self.body_positions()[:, 2]
        pe = self.gravity * np.sum(self._masses_ep * z)
        return float(ke + pe)

    def _require_episode(self):
        if not self._episode_active:
            raise ValidationError("no active episode; call reset() first")

    # -- control step ----------------------------------------------------------

    def step(self, action, base_action=None):
        """Advance one 50 Hz control step.

        `base_action` is the flow-policy component when a residual is active;
        it feeds the base policy's previous-action observation slot. Returns
        (observation, reward, done, info).
        """
        self._require_episode()
        if self._done:
            raise ValidationError("episode finished; call reset()")
        action = np.asarray(action, dtype=float).reshape(self.n_joints)
        if not np.all(np.isfinite(action)):
            raise ValidationError("non-finite action")
        base_action = action if base_action is None else np.asarray(
            base_action, dtype=float).reshape(self.n_joints)

        self._hist.append(self._proprio(self._prev_action_base))
        self._hist = self._hist[-self.history_len:]

        rand = self._rand
        disturbance = self._rng.uniform(-rand.disturbance, rand.disturbance, self.n_joints)
        q_tar = self._q0_eff + self.action_scale * action
        qdot_pre = self._qdot.copy()
        tau_cmd0 = self.kp * (q_tar - self._q) - self.kd * qdot_pre
        tau_clipped0 = np.array([
            actuation.clip_torque(tau_cmd0[j], qdot_pre[j], self._actuators_ep[j])
            for j in range(self.n_joints)])
        tau_applied0 = tau_clipped0 - np.array([
            actuation.friction_torque(qdot_pre[j], self._actuators_ep[j])
            for j in range(self.n_joints)])

        h = self.dt / self.n_substeps
        q, qdot = self._q, self._qdot
        for _ in range(self.n_substeps):
            tau_cmd = self.kp * (q_tar - q) - self.kd * qdot
            tau = np.array([
                actuation.actuate(tau_cmd[j], qdot[j], self._actuators_ep[j])
                for j in range(self.n_joints)]) + disturbance
            qacc = self._qacc(q, qdot, tau)
            qdot = qdot + h * qacc
            q = q + h * qdot
        self._q, self._qdot = q, qdot

        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            self._done = True
            raise NumericalBlowupError(
                f"state became non-finite at step {self._step_count + 1}")

        self._step_count += 1
        self._prev_action_total = action.copy()
        self._prev_action_base = base_action.copy()

        k = self.ref_frame()
        q_ref = self.motion.q[k]
        q_err = float(np.mean(np.abs(self._q - q_ref)))
        powers = tau_applied0 * qdot_pre
        pen_cost, pen_reward = actuation.neg_power_penalty(powers, self.power_cfg)
        reward = -q_err + pen_reward

        body = self.body_positions()
        ref_body = self.motion.body_pos[k]
        z_err = body[:, 2] - ref_body[:, 2]
        orient_err = abs(_wrap_angle(
            self._tip_angle(self._q) - self._tip_angle(q_ref)))
        terminated = check_termination(
            z_err, orient_err, self.thresholds, relaxed=self._mode == "aggressive")
        timeout = self._step_count >= self.episode_len
        self._done = terminated or timeout

        info = {
            "q": self._q.copy(),
            "qdot": self._qdot.copy(),
            "qdot_pre": qdot_pre,
            "tau_cmd": tau_cmd0,
            "tau_clipped": tau_clipped0,
            "tau_applied": tau_applied0,
            "power": powers,
            "neg_power_cost": pen_cost,
            "q_err": q_err,
            "z_err": z_err,
            "orient_err": orient_err,
            "body_pos": body,
            "ref_body_pos": ref_body.copy(),
            "terminated_early": bool(terminated),
            "timeout": bool(timeout and not terminated),
            "relaxed": self._mode == "aggressive",
        }
        return self.build_observation(), reward, self._done, info


    def step_passive(self) -> None:
        """Advance one control step with zero commanded torque.

        No PD, no disturbances; friction is the only actuator effect. Useful
        for free-swing demos and dissipation checks. With the semi-implicit
        substep integration, per-step energy decrease is guaranteed when
        (dt / n_substeps) * (mu_s / v_act + mu_d) < 2 * lambda_min(M).
        """
        self._require_episode()
        h = self.dt / self.n_substeps
        q, qdot = self._q, self._qdot
        for _ in range(self.n_substeps):
            tau = -np.array([
                actuation.friction_torque(qdot[j], self._actuators_ep[j])
                for j in range(self.n_joints)])
            qacc = self._qacc(q, qdot, tau)
            qdot = qdot + h * qacc
            q = q + h * qdot
        self._q, self._qdot = q, qdot
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise NumericalBlowupError("state became non-finite during passive step")


def _wrap_angle(x: float) -> float:
    return (x + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Scripted expert controllers.

@dataclass
class ExpertPolicy:
    """Privileged PD tracker for one reference motion.

    Commands the reference pose `lookahead` frames ahead through the PD map,
    with velocity feedforward plus a computed-torque feedforward (full inverse
    dynamics at the reference, or gravity only when accel_ff is off). All
    feedforward terms are privileged: they read the env's randomized defaults
    and dynamics model.
    """

    motion: MotionClip
    lookahead: int = 1
    vel_ff: float = 1.0
    accel_ff: bool = True
    gravity_ff: bool = True
    friction_ff: bool = True
    action_limit: float = 4.0


def expert_action(expert: ExpertPolicy, env: ArmEnv) -> np.ndarray:
    """Expert label for the env's current state."""
    env._require_episode()
    if expert.motion is not env.motion and not expert.motion.allclose(env.motion):
        raise ValidationError("expert's motion does not match the env's reference")
    idx = env.ref_frame(env.step_count + expert.lookahead)
    q_ref = expert.motion.q[idx]
    qd_ref = env._ref_qdot[idx]
    a = q_ref - env.q0_eff + expert.vel_ff * (env.kd / env.kp) * qd_ref
    if expert.accel_ff:
        a = a + env.inverse_dynamics(q_ref, qd_ref, env._ref_qacc[idx]) / env.kp
    elif expert.gravity_ff:
        a = a + env.gravity_torque(q_ref) / env.kp
    if expert.friction_ff:
        fr = np.array([
            actuation.friction_torque(qd_ref[j], env._actuators_ep[j])
            for j in range(env.n_joints)])
        a = a + fr / env.kp
    a = a / env.action_scale
    return np.clip(a, -expert.action_limit, expert.action_limit)
