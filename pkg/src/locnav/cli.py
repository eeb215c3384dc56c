"""`locnav` command line: train, eval, viz and scenario tools.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("locnav")


class UsageError(Exception):
    """Bad input detected after argument parsing (maps to exit status 2)."""


def _setup_logging():
    level = os.environ.get("LOCNAV_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _literal(v.strip())
    return out


def _literal(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    return v


def _load_scenario(name_or_path):
    from .world import load_scenario, resolve_scenario_path
    try:
        path = resolve_scenario_path(name_or_path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    sc = load_scenario(path)
    sc.validate()
    return sc


def _config(args, extra: dict):
    from .config import config_from_dict, load_config
    overrides = {"seed": args.seed, **extra, **_parse_sets(getattr(args, "set", None))}
    if getattr(args, "config", None):
        try:
            return load_config(args.config, overrides)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    return config_from_dict({}, overrides)


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    from .agent import Trainer, resume
    from .config import write_snapshot
    cfg = _config(args, {"scenario": args.scenario, "variant": args.variant, "out": args.out,
                         "workers": args.workers, "ppo.total_steps": args.steps})
    if cfg.variant == "dwa":
        raise UsageError("the dwa baseline is not trainable; pick a network variant")
    out = Path(cfg.out)
    if args.resume:
        tr = resume(out, total_steps=cfg.ppo.total_steps)
    else:
        sc = _load_scenario(cfg.scenario)
        out.mkdir(parents=True, exist_ok=True)
        write_snapshot(cfg, out / "config.resolved.toml")
        if cfg.workers > 1:
            log.info("training steps its environments in-process; --workers only affects eval")
        tr = Trainer(sc, cfg.ppo, cfg.variant, out, cfg.seed, cfg.env_params("estimate"))
        tr.run()
    t = tr.trailing()
    print(f"trained {tr.steps} steps, {len(tr.episodes)} episodes; trailing AR {t['AR']:.3f}, "
          f"mean reward {t['mean_reward']:.1f}; checkpoint in {out}")
    return 0


def _resolve_policy(args, cfg):
    from .config import VARIANTS
    from .eval import DwaPolicy, NetworkPolicy
    name = args.policy
    if name == "dwa":
        return DwaPolicy(cfg.dwa)
    ckpt = args.checkpoint
    if ckpt is None and Path(name).is_file():
        ckpt = name
    elif name not in VARIANTS:
        raise UsageError(f"unknown policy/variant {name!r}; valid: {', '.join(VARIANTS)} "
                         "or a checkpoint path")
    if ckpt is None:
        raise UsageError(f"policy {name!r} needs --checkpoint")
    if not Path(ckpt).is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    pol = NetworkPolicy.from_checkpoint(ckpt)
    if name in VARIANTS and pol.variant.value != name:
        raise UsageError(f"checkpoint holds variant {pol.variant.value!r}, not {name!r}")
    return pol


def cmd_eval(args) -> int:
    from .eval import (compute_metrics, run_episodes, save_scan, write_metrics_csv,
                       write_trajectory_csv)
    cfg = _config(args, {"workers": args.workers})
    policy = _resolve_policy(args, cfg)
    scenarios = [_load_scenario(s) for s in args.scenario]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, pooled = [], []
    for sc in scenarios:
        recs = run_episodes(sc, policy, args.episodes, cfg.seed, cfg.env_params("ground_truth"),
                            cfg.workers)
        reports.append(compute_metrics(recs, policy.name, sc.name, cfg.seed))
        pooled.extend(recs)
        if args.per_episode_logs:
            for i, r in enumerate(recs):
                write_trajectory_csv(out / f"{sc.name}_ep{i:04d}.csv", r)
                save_scan(out / f"{sc.name}_ep{i:04d}_scan.csv", r.first_scan)
    if len(scenarios) > 1:
        reports.append(compute_metrics(pooled, policy.name, "pooled", cfg.seed))
    path = write_metrics_csv(out / "metrics.csv", reports)
    print(f"{'scenario':<12}{'n':>6}{'AR':>8}{'CR':>8}{'LR':>8}{'SR':>8}{'t':>9}{'e_p':>8}{'e_a':>8}")
    for r in reports:
        print(f"{r.scenario:<12}{r.n:>6}{r.AR:>8.3f}{r.CR:>8.3f}{r.LR:>8.3f}{r.SR:>8.3f}"
              f"{r.t[0]:>9.2f}{r.e_p[0]:>8.3f}{r.e_a[0]:>8.3f}")
    print(f"metrics written to {path}")
    return 0


def cmd_viz_trajectory(args) -> int:
    from .eval import read_trajectory_csv, render_trajectory
    if not Path(args.input).is_file():
        raise UsageError(f"trajectory file not found: {args.input}")
    sc = _load_scenario(args.scenario)
    rec = read_trajectory_csv(args.input, sc.name)
    path = render_trajectory(rec, sc, args.out)
    print(f"wrote {path}")
    return 0


def cmd_viz_activations(args) -> int:
    from .eval import load_scan, render_activations
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        scan = load_scan(args.scan)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    path = render_activations(args.checkpoint, scan, args.out)
    print(f"wrote {path}")
    return 0


def cmd_scenario_validate(args) -> int:
    from .crowd import spawn_pedestrians
    from .world import rasterize, sample_pose_in_region
    sc = _load_scenario(args.scenario)
    rng = np.random.default_rng(args.seed)
    start = sample_pose_in_region(sc.robot_start_region, rng, sc.world, sc.robot_radius)
    sample_pose_in_region(sc.robot_goal_region, rng, sc.world, sc.robot_radius)
    peds = spawn_pedestrians(sc, rng, keep_clear=[(start.x, start.y, sc.robot_radius + 0.5)])
    grid = rasterize(sc.world)
    b = sc.world.bounds
    print(f"{sc.name}: {b.xmax - b.xmin:g} x {b.ymax - b.ymin:g} m, {len(sc.world.segments)} segments, "
          f"{len(peds)} pedestrians, grid {grid.width}x{grid.height} - ok")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locnav", description="Localization-aware crowd navigation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, required=True, help="master random seed (required)")
        if config:
            sp.add_argument("--config", help="run config TOML (path or shipped name)")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override a config value; repeatable")

    t = sub.add_parser("train", help="train a policy with PPO")
    common(t)
    t.add_argument("--scenario")
    t.add_argument("--variant")
    t.add_argument("--out")
    t.add_argument("--steps", type=int, help="total environment steps")
    t.add_argument("--workers", type=int)
    t.add_argument("--resume", action="store_true", help="continue the run saved in --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="benchmark a policy")
    common(e)
    e.add_argument("--policy", required=True, help="'dwa', a variant name (with --checkpoint) or a checkpoint path")
    e.add_argument("--checkpoint")
    e.add_argument("--scenario", nargs="+", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--out", default="eval_out")
    e.add_argument("--workers", type=int)
    e.add_argument("--per-episode-logs", action="store_true")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="render figures")
    vsub = v.add_subparsers(dest="viz_command", required=True)
    vt = vsub.add_parser("trajectory", help="top view and error chart of a recorded episode")
    common(vt, config=False)
    vt.add_argument("--input", required=True, help="trajectory CSV written by eval --per-episode-logs")
    vt.add_argument("--scenario", required=True)
    vt.add_argument("--out", required=True)
    vt.set_defaults(func=cmd_viz_trajectory)
    va = vsub.add_parser("activations", help="first scan-layer activations of a checkpoint")
    common(va, config=False)
    va.add_argument("--checkpoint", required=True)
    va.add_argument("--scan", required=True, help="720 ranges (.npy or comma separated text)")
    va.add_argument("--out", required=True, help=".svg or .ppm")
    va.set_defaults(func=cmd_viz_activations)

    s = sub.add_parser("scenario", help="scenario tools")
    ssub = s.add_subparsers(dest="scenario_command", required=True)
    sv = ssub.add_parser("validate", help="parse a scenario and try spawning everything in it")
    common(sv, config=False)
    sv.add_argument("scenario")
    sv.set_defaults(func=cmd_scenario_validate)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .nn.checkpoint import CheckpointError
    from .world import SamplingExhausted, ScenarioError

    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError, CheckpointError, SamplingExhausted) as exc:
        print(f"locnav: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"locnav: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
