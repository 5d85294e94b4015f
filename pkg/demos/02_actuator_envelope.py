"""Actuator physics walk-through: torque-speed envelopes, friction losses,
derived PD gains, and the negative-power penalty.

The envelope picks its ceiling from the sign alignment of velocity and
commanded torque (motoring vs braking), then derates linearly between the
knee speed v_x1 and the zero-torque speed v_x2. Friction subtracts a smoothed
Coulomb term plus viscous drag after clipping.
"""

from flowtrack.actuation import (PowerPenaltyCfg, actuate, clip_torque,
                                 default_catalog, envelope_limit, friction_torque,
                                 joint_power, neg_power_penalty, pd_gains)

catalog = default_catalog()

print("derived PD gains (10 Hz natural frequency, damping ratio 2):")
print(f"{'actuator':<12}{'kp':>10}{'kd':>9}{'action scale':>14}")
for name, p in catalog.items():
    g = pd_gains(p)
    print(f"{name:<12}{g.kp:>10.2f}{g.kd:>9.3f}{g.action_scale:>14.4f}")

print()
p = catalog["7520-22.5"]
print(f"7520-22.5 motoring envelope (tau_y1={p.tau_y1}, knees {p.v_x1}..{p.v_x2} rad/s):")
print(f"{'v [rad/s]':>10}{'limit':>9}{'clip(200)':>11}{'friction':>10}{'applied':>9}")
for v in (0.0, 5.0, 14.5, 18.6, 22.7, 30.0):
    lim = envelope_limit(v, 200.0, p)
    cl = clip_torque(200.0, v, p)
    fr = friction_torque(v, p)
    print(f"{v:>10.1f}{lim:>9.1f}{cl:>11.1f}{fr:>10.2f}{actuate(200.0, v, p):>9.1f}")
print("at |v|=18.6 (ramp midpoint) a 200 N*m command clips to exactly 55.5 N*m;")
print("beyond v_x2 the actuator cannot produce torque at all.")

print()
print("braking vs motoring ceilings at v=5 rad/s:")
print(f"  command +10 N*m -> limit {envelope_limit(5.0, +10.0, p):.1f} (motoring, tau_y1)")
print(f"  command -10 N*m -> limit {envelope_limit(5.0, -10.0, p):.1f} (braking,  tau_y2)")

print()
print("negative-power penalty (knee constants: deadband 150 W, norm 500, weight -10):")
cfg = PowerPenaltyCfg()
for tau, omega in ((-200.0, 2.0), (-100.0, 1.0), (150.0, 2.0)):
    P = joint_power(tau, omega)
    cost, reward = neg_power_penalty([P], cfg)
    print(f"  tau={tau:>7.1f}  omega={omega:>4.1f}  P={P:>7.1f} W  cost={cost:.4f}  reward={reward:.3f}")
print("only braking beyond the deadband is punished; positive power is free.")
