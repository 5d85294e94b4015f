"""Command-line workflows tying the library together.

Subcommands:
  analyze   - complexity metrics + difficulty scores for a motion directory
  actuator  - inspect an actuator's envelope/friction at a query point or sweep
  train     - DAgger-distill a flow policy from auto-constructed experts
  eval      - closed-loop tracking metrics for a trained policy
  refine    - evolution-strategy residual refinement in aggressive mode

Every subcommand is deterministic given --seed (default 0; wall-clock entropy
is never used). Exit codes: 0 success, 1 usage/config error, 2 runtime
failure. Numeric output uses 6 significant digits so reports diff cleanly.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import actuation, distill, flow, metrics
from .env import ArmEnv, ExpertPolicy, load_env_config, merge_config
from .errors import ConfigError
from .motion import load_motion


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _round6(x: float) -> float:
    return float(f"{x:.6g}")


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _motion_files(path: str) -> list[str]:
    if os.path.isfile(path):
        return [path]
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
        return [os.path.join(path, n) for n in names]
    raise ConfigError(f"motion path '{path}' is neither a file nor a directory")


def _apply_sets(tree: dict, assignments: list[str]) -> None:
    """Apply --set dot.path=value overrides onto a nested config tree."""
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got '{item}'")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            elif part in node:
                node = node[part]
            else:
                raise ConfigError(f"--set: unknown config path '{key}'")
        leaf = parts[-1]
        if isinstance(node, list):
            node[int(leaf)] = value
        elif leaf in node:
            node[leaf] = value
        else:
            raise ConfigError(f"--set: unknown config path '{key}'")


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


DEFAULT_TRAIN_CFG = {
    "iterations": 12,
    "episodes_per_iter": 3,
    "gradient_steps": 250,
    "batch_size": 192,
    "learning_rate": 2e-3,
    "lr_decay": 1.0,
    "hidden": [96, 96],
    "time_embed_dim": 8,
    "checkpoint_every": 0,  # also save policy_iter<k>.json every k iterations
    "sampler": {"steps": 5, "alpha": 1.5, "beta": 1.0},
    "expert": {"lookahead": 1, "action_limit": 6.0},
}

DEFAULT_ES_CFG = {
    "generations": 15,
    "population": 6,
    "sigma": 0.05,
    "episodes_per_eval": 3,
    "residual_hidden": [24],
    "residual_bound": 0.4,
}


def _merge_over(defaults: dict, overrides: dict, origin: str) -> dict:
    cfg = copy.deepcopy(defaults)
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"{origin}: unknown key '{key}'")
        if isinstance(cfg[key], dict) and isinstance(value, dict):
            cfg[key] = _merge_over(cfg[key], value, f"{origin}.{key}")
        else:
            cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_analyze(args) -> int:
    files = _motion_files(args.motions)
    if not files:
        print("no motion files found", file=sys.stderr)
        return 1
    report = []
    failures = 0
    for path in files:
        name = os.path.splitext(os.path.basename(path))[0]
        try:
            clip = load_motion(path)
            scores = metrics.compute_complexity(clip, h_air=args.h_air)
        except Exception as exc:  # per-file failures warn but do not abort
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        report.append({
            "motion": name,
            "raw": {k: _round6(v) for k, v in scores.raw_dict().items()},
            "scores": [_round6(v) for v in scores.s],
        })
    if failures == len(files):
        print("all motion files failed to analyze", file=sys.stderr)
        return 1
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        _write_atomic(args.out, text)
        _say(args, f"wrote {len(report)} entries to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_actuator(args) -> int:
    catalog = actuation.load_catalog(args.catalog) if args.catalog else actuation.default_catalog()
    if args.name not in catalog:
        print(f"unknown actuator '{args.name}'; catalog has: {', '.join(sorted(catalog))}",
              file=sys.stderr)
        return 1
    p = catalog[args.name]
    if args.sweep:
        vs = np.linspace(0.0, 1.2 * p.v_x2, args.sweep)
        print("v,limit,clipped,friction,applied")
        for v in vs:
            lim = actuation.envelope_limit(v, args.tau, p)
            cl = actuation.clip_torque(args.tau, v, p)
            fr = actuation.friction_torque(v, p)
            print(",".join(_fmt(x) for x in (v, lim, cl, fr, cl - fr)))
        return 0
    v, tau = args.v, args.tau
    lim = actuation.envelope_limit(v, tau, p)
    cl = actuation.clip_torque(tau, v, p)
    fr = actuation.friction_torque(v, p)
    ap = actuation.actuate(tau, v, p)
    rows = [
        ("envelope limit L(v) [N*m]", lim),
        ("clipped torque [N*m]", cl),
        ("friction loss [N*m]", fr),
        ("applied torque [N*m]", ap),
        ("mechanical power [W]", actuation.joint_power(ap, v)),
    ]
    print(f"actuator {args.name} @ v={_fmt(v)} rad/s, tau_cmd={_fmt(tau)} N*m")
    for label, value in rows:
        print(f"  {label:<28s} {_fmt(value)}")
    return 0


def _build_env_and_motions(args, assignments_tree):
    env_cfg = load_env_config(args.env) if args.env else merge_config(None)
    assignments_tree["env"] = env_cfg
    _apply_sets(assignments_tree, args.set)
    env = ArmEnv(assignments_tree["env"])
    files = _motion_files(args.motions)
    if not files:
        raise ConfigError(f"no motion files in '{args.motions}'")
    motions = {}
    for path in files:
        name = os.path.splitext(os.path.basename(path))[0]
        clip = load_motion(path)
        if clip.n_joints != env.n_joints:
            raise ConfigError(
                f"{path}: motion has {clip.n_joints} joints, env has {env.n_joints}")
        motions[name] = clip
    return env, motions


def cmd_train(args) -> int:
    cfg = _merge_over(DEFAULT_TRAIN_CFG, _load_json(args.cfg) if args.cfg else {}, "train cfg")
    tree = {"train": cfg}
    env, motions = _build_env_and_motions(args, tree)
    cfg = tree["train"]
    names = list(motions)
    clips = [motions[n] for n in names]
    experts = [ExpertPolicy(c, lookahead=int(cfg["expert"]["lookahead"]),
                            action_limit=float(cfg["expert"]["action_limit"]))
               for c in clips]
    sampler = flow.SamplerCfg(steps=int(cfg["sampler"]["steps"]),
                              alpha=float(cfg["sampler"]["alpha"]),
                              beta=float(cfg["sampler"]["beta"]))
    net = flow.init_net(env.n_joints, env.obs_dim, hidden=tuple(cfg["hidden"]),
                        time_embed_dim=int(cfg["time_embed_dim"]),
                        alpha=sampler.alpha, beta=sampler.beta,
                        rng=np.random.default_rng(args.seed))
    dcfg = distill.DistillCfg(
        iterations=int(cfg["iterations"]),
        episodes_per_iter=int(cfg["episodes_per_iter"]),
        gradient_steps=int(cfg["gradient_steps"]),
        batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["learning_rate"]),
        lr_decay=float(cfg["lr_decay"]),
        sampler=sampler,
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    every = int(cfg["checkpoint_every"])
    on_iteration = None
    if every > 0:
        def on_iteration(it, snap, _loss):
            if (it + 1) % every == 0:
                flow.save_policy(snap, os.path.join(args.out, f"policy_iter{it + 1}.json"))
    net, losses = distill.dagger_train(env, experts, clips, net, dcfg,
                                       on_iteration=on_iteration)
    flow.save_policy(net, os.path.join(args.out, "policy.json"))
    csv = "iteration,loss\n" + "".join(
        f"{i},{_fmt(l)}\n" for i, l in enumerate(losses))
    _write_atomic(os.path.join(args.out, "loss.csv"), csv)
    snapshot = {"train": cfg, "env": tree["env"], "seed": args.seed, "motions": names}
    _write_atomic(os.path.join(args.out, "config.json"),
                  json.dumps(snapshot, indent=2) + "\n")
    final = losses[-1] if losses else float("nan")
    _say(args, f"trained on {len(clips)} motion(s); final loss {_fmt(final)}")
    return 0


def cmd_eval(args) -> int:
    tree = {}
    env, motions = _build_env_and_motions(args, tree)
    net = flow.load_policy(args.policy)
    if net.obs_dim != env.obs_dim or net.action_dim != env.n_joints:
        raise ConfigError(
            f"checkpoint dims (obs {net.obs_dim}, act {net.action_dim}) do not match "
            f"env (obs {env.obs_dim}, act {env.n_joints})")
    residual = distill.load_residual(args.residual) if args.residual else None
    results = distill.evaluate_policy(net, env, motions, residual=residual,
                                      n_rollouts=args.rollouts, seed=args.seed)
    doc = {"motions": {}, "aggregate": {}}
    for name in sorted(results):
        m = results[name]
        doc["motions"][name] = {
            "mpjpe_mm": _round6(m.mpjpe_mm),
            "dvel": _round6(m.dvel),
            "dacc": _round6(m.dacc),
            "success": _round6(m.success),
            "n_episodes": m.n_episodes,
        }
    vals = list(results.values())
    doc["aggregate"] = {
        "mpjpe_mm": _round6(float(np.mean([m.mpjpe_mm for m in vals]))),
        "dvel": _round6(float(np.mean([m.dvel for m in vals]))),
        "dacc": _round6(float(np.mean([m.dacc for m in vals]))),
        "success": _round6(float(np.mean([m.success for m in vals]))),
        "n_episodes": sum(m.n_episodes for m in vals),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    _say(args, f"success rate {_fmt(doc['aggregate']['success'])}")
    return 0


def cmd_refine(args) -> int:
    cfg = _merge_over(DEFAULT_ES_CFG, _load_json(args.cfg) if args.cfg else {}, "refine cfg")
    tree = {"es": cfg}
    env, motions = _build_env_and_motions(args, tree)
    cfg = tree["es"]
    net = flow.load_policy(args.policy)
    if net.obs_dim != env.obs_dim or net.action_dim != env.n_joints:
        raise ConfigError(
            f"checkpoint dims (obs {net.obs_dim}, act {net.action_dim}) do not match "
            f"env (obs {env.obs_dim}, act {env.n_joints})")
    name = sorted(motions)[0]
    residual = distill.init_residual(env, hidden=tuple(cfg["residual_hidden"]),
                                     bound=float(cfg["residual_bound"]),
                                     rng=np.random.default_rng(args.seed))
    escfg = distill.ESCfg(
        generations=int(cfg["generations"]),
        population=int(cfg["population"]),
        sigma=float(cfg["sigma"]),
        episodes_per_eval=int(cfg["episodes_per_eval"]),
        seed=args.seed,
    )
    refined, history = distill.es_refine(net, residual, env, motions[name], escfg)
    os.makedirs(args.out, exist_ok=True)
    distill.save_residual(refined, os.path.join(args.out, "residual.json"))
    csv = "generation,best_reward\n" + "".join(
        f"{i},{_fmt(r)}\n" for i, r in enumerate(history))
    _write_atomic(os.path.join(args.out, "reward.csv"), csv)
    snapshot = {"es": cfg, "env": tree["env"], "seed": args.seed, "motion": name}
    _write_atomic(os.path.join(args.out, "config.json"),
                  json.dumps(snapshot, indent=2) + "\n")
    _say(args, f"refined on '{name}'; best reward {_fmt(history[-1])} "
               f"(started {_fmt(history[0])})")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowtrack",
        description="Flow-matching motion tracking on a toy torque-controlled arm.")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for all randomness (default 0, never wall clock)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress chatter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="complexity metrics for a motion directory")
    p.add_argument("--motions", required=True, help="motion JSON file or directory")
    p.add_argument("--h-air", type=float, default=metrics.DEFAULT_H_AIR,
                   help="airborne height threshold in metres")
    p.add_argument("--out", help="report path (stdout when omitted)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("actuator", help="inspect an actuator model")
    p.add_argument("name", help="catalog name, e.g. 7520-22.5")
    p.add_argument("--v", type=float, default=0.0, help="joint velocity rad/s")
    p.add_argument("--tau", type=float, default=0.0, help="commanded torque N*m")
    p.add_argument("--sweep", type=int, default=0, metavar="N",
                   help="print an N-point CSV over a velocity grid instead")
    p.add_argument("--catalog", help="catalog JSON (defaults to the built-in four)")
    p.set_defaults(func=cmd_actuator)

    for name, fn, extra in (
        ("train", cmd_train, "distill experts into a flow policy"),
        ("eval", cmd_eval, "closed-loop tracking metrics"),
        ("refine", cmd_refine, "ES residual refinement (aggressive mode)"),
    ):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--motions", required=True, help="motion JSON file or directory")
        p.add_argument("--env", help="env config JSON (defaults built in)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dot-path config override, e.g. env.envelope_scale=0.7")
        if name == "train":
            p.add_argument("--cfg", help="training config JSON")
            p.add_argument("--out", required=True, help="output directory")
        elif name == "eval":
            p.add_argument("--policy", required=True, help="policy checkpoint")
            p.add_argument("--residual", help="optional residual checkpoint")
            p.add_argument("--rollouts", type=int, default=10)
            p.add_argument("--out", help="metrics JSON path (stdout when omitted)")
        else:
            p.add_argument("--policy", required=True, help="base policy checkpoint")
            p.add_argument("--cfg", help="refinement config JSON")
            p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
