"""Actuator-level physics: PD control law, torque-speed envelope clipping,
friction losses, mechanical power, and the negative-power penalty.

The envelope picks a motoring or braking torque ceiling from the sign
alignment of velocity and commanded torque, derates it linearly between the
knee speed v_x1 and the zero-torque speed v_x2, and clamps the command
symmetrically to that magnitude. Friction (smoothed Coulomb + viscous) is
subtracted after clipping. All functions are stateless and accept scalars or
same-shaped arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import SchemaError, ValidationError

_PARAM_FIELDS = ("tau_y1", "tau_y2", "v_x1", "v_x2", "mu_s", "v_act", "mu_d", "armature_I")


@dataclass(frozen=True)
class ActuatorParams:
    """Torque-speed envelope, friction, and armature constants of one actuator.

    tau_y1 / tau_y2:  motoring / braking torque ceilings (N*m)
    v_x1   / v_x2:    envelope knee / zero-torque speeds (rad/s)
    mu_s, v_act:      smoothed-Coulomb magnitude (N*m) and activation speed
    mu_d:             viscous coefficient (N*m*s/rad)
    armature_I:       reflected rotor inertia (kg*m^2)
    """

    tau_y1: float
    tau_y2: float
    v_x1: float
    v_x2: float
    mu_s: float
    v_act: float
    mu_d: float
    armature_I: float

    def __post_init__(self):
        if not (0 < self.v_x1 < self.v_x2):
            raise ValidationError(f"need 0 < v_x1 < v_x2, got {self.v_x1}, {self.v_x2}")
        if self.tau_y1 <= 0 or self.tau_y2 <= 0:
            raise ValidationError("torque ceilings must be positive")
        if self.mu_s < 0 or self.mu_d < 0:
            raise ValidationError("friction coefficients must be non-negative")
        if self.v_act <= 0:
            raise ValidationError("v_act must be positive")
        if self.armature_I <= 0:
            raise ValidationError("armature inertia must be positive")

    def scaled(self, torque_scale: float = 1.0, friction_scale: float = 1.0) -> "ActuatorParams":
        """Copy with torque ceilings and/or friction coefficients rescaled."""
        return ActuatorParams(
            tau_y1=self.tau_y1 * torque_scale,
            tau_y2=self.tau_y2 * torque_scale,
            v_x1=self.v_x1,
            v_x2=self.v_x2,
            mu_s=self.mu_s * friction_scale,
            v_act=self.v_act,
            mu_d=self.mu_d * friction_scale,
            armature_I=self.armature_I,
        )


@dataclass(frozen=True)
class PDGains:
    """Joint PD gains plus the action-to-setpoint mapping q_tar = q0 + alpha*a."""

    kp: float
    kd: float
    action_scale: float
    q0: float = 0.0

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0:
            raise ValidationError("kp and kd must be positive")
        if self.action_scale <= 0:
            raise ValidationError("action_scale must be positive")


@dataclass(frozen=True)
class PowerPenaltyCfg:
    """Deadbanded quadratic penalty on negative joint mechanical power.

    Defaults are the knee-joint constants: 150 W deadband, 500 W normalizer,
    weight -10. joint_selector picks which joints the penalty applies to
    (None = all).
    """

    deadband: float = 150.0
    norm: float = 500.0
    weight: float = -10.0
    joint_selector: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.deadband < 0:
            raise ValidationError("deadband must be non-negative")
        if self.norm <= 0:
            raise ValidationError("norm must be positive")


def default_catalog() -> dict[str, ActuatorParams]:
    """The built-in actuator catalog (four production motor models)."""
    text = resources.files("flowtrack.data").joinpath("actuators.json").read_text()
    return _parse_catalog(text, "<builtin>")


def load_catalog(path) -> dict[str, ActuatorParams]:
    """Load an actuator catalog JSON file: {name: {eight parameter fields}}."""
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_catalog(fh.read(), str(path))


def _parse_catalog(text: str, origin: str) -> dict[str, ActuatorParams]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{origin}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{origin}: catalog must be an object")
    out = {}
    for name, fields in doc.items():
        missing = [k for k in _PARAM_FIELDS if k not in fields]
        if missing:
            raise SchemaError(f"{origin}: actuator '{name}' missing key '{missing[0]}'")
        extra = [k for k in fields if k not in _PARAM_FIELDS]
        if extra:
            raise SchemaError(f"{origin}: actuator '{name}' unknown key '{extra[0]}'")
        out[name] = ActuatorParams(**{k: float(fields[k]) for k in _PARAM_FIELDS})
    return out


def pd_gains(params: ActuatorParams, f_hz: float = 10.0, zeta: float = 2.0,
             tau_max: float | None = None, q0: float = 0.0) -> PDGains:
    """Derive PD gains from armature inertia: kp = I*w^2, kd = 2*I*zeta*w.

    The action scale maps a unit action to 0.25 * tau_max worth of position
    offset; tau_max defaults to the actuator's motoring ceiling.
    """
    if f_hz <= 0:
        raise ValidationError(f"natural frequency must be positive, got {f_hz}")
    if tau_max is None:
        tau_max = params.tau_y1
    if tau_max <= 0:
        raise ValidationError(f"tau_max must be positive, got {tau_max}")
    omega = 2.0 * np.pi * f_hz
    kp = params.armature_I * omega * omega
    kd = 2.0 * params.armature_I * zeta * omega
    return PDGains(kp=kp, kd=kd, action_scale=0.25 * tau_max / kp, q0=q0)


def pd_torque(action, q, qdot, g: PDGains):
    """Pre-clip PD torque: kp*(q0 + alpha*action - q) - kd*qdot."""
    q_tar = g.q0 + g.action_scale * np.asarray(action, dtype=float)
    return g.kp * (q_tar - np.asarray(q, dtype=float)) - g.kd * np.asarray(qdot, dtype=float)


def torque_ceiling(v, tau_in, p: ActuatorParams):
    """Motoring ceiling when v and tau_in align (v*tau > 0), braking otherwise."""
    motoring = np.asarray(v, dtype=float) * np.asarray(tau_in, dtype=float) > 0
    out = np.where(motoring, p.tau_y1, p.tau_y2)
    return float(out) if out.ndim == 0 else out


def envelope_limit(v, tau_in, p: ActuatorParams):
    """Admissible torque magnitude L(v): flat below v_x1, linear to 0 at v_x2."""
    ceiling = torque_ceiling(v, tau_in, p)
    speed = np.abs(np.asarray(v, dtype=float))
    frac = np.clip((speed - p.v_x1) / (p.v_x2 - p.v_x1), 0.0, 1.0)
    out = ceiling * (1.0 - frac)
    return float(out) if np.ndim(out) == 0 else out


def clip_torque(tau_cmd, v, p: ActuatorParams):
    """Clamp a torque command into [-L(v), +L(v)]."""
    limit = envelope_limit(v, tau_cmd, p)
    out = np.clip(np.asarray(tau_cmd, dtype=float), -limit, limit)
    return float(out) if out.ndim == 0 else out


def friction_torque(v, p: ActuatorParams):
    """Smoothed Coulomb plus viscous loss: mu_s*tanh(v/v_act) + mu_d*v."""
    v = np.asarray(v, dtype=float)
    out = p.mu_s * np.tanh(v / p.v_act) + p.mu_d * v
    return float(out) if out.ndim == 0 else out


def actuate(tau_cmd, v, p: ActuatorParams):
    """Applied torque: envelope-clipped command minus the friction loss.

    The subtraction is literal, so at near-zero commands friction can flip the
    sign of the applied torque.
    """
    out = clip_torque(tau_cmd, v, p) - friction_torque(v, p)
    return float(out) if np.ndim(out) == 0 else out


def joint_power(tau, omega):
    """Instantaneous mechanical power tau * omega (negative while braking)."""
    out = np.asarray(tau, dtype=float) * np.asarray(omega, dtype=float)
    return float(out) if out.ndim == 0 else out


def neg_power_penalty(powers, cfg: PowerPenaltyCfg = PowerPenaltyCfg()) -> tuple[float, float]:
    """Deadbanded quadratic cost on negative power; returns (cost, weight*cost)."""
    powers = np.atleast_1d(np.asarray(powers, dtype=float))
    if cfg.joint_selector is not None:
        powers = powers[list(cfg.joint_selector)]
    over = np.maximum(-powers - cfg.deadband, 0.0)
    cost = float(np.sum((over / cfg.norm) ** 2))
    return cost, cfg.weight * cost
