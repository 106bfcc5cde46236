"""Command-line entry point: ``jumpkit {train,eval,check,plot}``.

Exit codes: 0 ok, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import time

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, apply_overrides, load_config, save_config
from .io import atomic_write_text, read_csv
from .ppo import Divergence
from .rewards import HORIZONTAL, VERTICAL
from .sim import NumericalBlowup

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("jumpkit")


def _finite(v):
    """JSON has no inf/nan: report those as null."""
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def _dump(summary: dict) -> str:
    return json.dumps({k: _finite(v) for k, v in summary.items()}, indent=2)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--envs", type=int, help="number of parallel environments")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded, bitwise reproducible run")
    p.add_argument("--task", choices=(VERTICAL, HORIZONTAL))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpkit", description="Planar jumping robot: training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a jumping policy with PPO")
    _common(p)
    p.add_argument("--updates", type=int, help="override ppo.max_updates")

    p = sub.add_parser("eval", help="evaluate a checkpoint over a command grid")
    _common(p)
    p.add_argument("--checkpoint", help="policy checkpoint (default: <out>/policy.ckpt)")
    p.add_argument("--grid", help="'lo:hi:n' or comma-separated targets in meters")
    p.add_argument("--episodes", type=int, default=1, help="episodes per grid point")
    p.add_argument("--randomize", action="store_true", help="keep domain randomization and noise on")
    p.add_argument("--svg", action="store_true", help="also write an achieved-vs-target SVG")

    p = sub.add_parser("check", help="validate the config and run the fast self-check suite")
    _common(p)

    p = sub.add_parser("plot", help="render curves.csv or eval.csv to SVG")
    p.add_argument("csv", help="a jumpkit curves or eval CSV")
    p.add_argument("--out", help="SVG path (default: next to the CSV)")
    return parser


def parse_grid(spec: str | None, task: str) -> np.ndarray:
    if spec is None:
        from .train import default_grid
        return default_grid(task)
    spec = spec.strip()
    if not spec:
        raise ConfigError(["--grid: empty grid"])
    try:
        if ":" in spec:
            lo, hi, n = spec.split(":")
            if int(n) < 1:
                raise ConfigError(["--grid: need at least one point"])
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise ConfigError([f"--grid: cannot parse {spec!r}"]) from None


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, out=args.out, envs=args.envs, task=args.task,
                          deterministic=args.deterministic)
    if getattr(args, "updates", None) is not None:
        if args.updates < 0:
            raise ConfigError(["--updates: must be >= 0"])
        cfg.ppo.max_updates = args.updates
    return cfg


@contextlib.contextmanager
def _threads(deterministic: bool):
    """Deterministic runs pin BLAS to one thread so reductions keep a fixed order."""
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def cmd_train(args) -> int:
    from .train import train
    cfg = _resolve(args)
    os.makedirs(cfg.out, exist_ok=True)
    save_config(os.path.join(cfg.out, "config.yaml"), cfg)
    t = cfg.training

    def progress(row):
        if row["update"] % 10 == 0 or row["eval_success"] == row["eval_success"]:
            log.info("update %d  reward %.3f  success %.2f  range [%.2f, %.2f]  eval %.2f",
                     row["update"], row["mean_reward"], row["success_rate"], row["range_lo"], row["range_hi"],
                     row["eval_success"])

    from .train import default_grid
    t0 = time.perf_counter()
    with _threads(cfg.deterministic):
        result = train(cfg.env, cfg.ppo, out_dir=cfg.out, widths=t.widths, eval_every=t.eval_every,
                       eval_grid=default_grid(cfg.task, t.eval_points), eval_episodes=t.eval_episodes,
                       time_budget=t.time_budget, stop_success=t.stop_success, stop_mae=t.stop_mae,
                       progress=progress, env_kwargs=cfg.env_kwargs())
    ev = result.final_eval or {}
    summary = {"updates": len(result.curves), "eval_success": ev.get("success_rate"),
               "eval_mae": ev.get("mean_abs_error"), "wall_time": round(time.perf_counter() - t0, 1),
               "checkpoint": result.checkpoint}
    atomic_write_text(os.path.join(cfg.out, "summary.json"), _dump(summary) + "\n")
    print(json.dumps({k: _finite(v) for k, v in summary.items()}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate, load_policy, write_eval
    cfg = _resolve(args)
    path = args.checkpoint or os.path.join(cfg.out, "policy.ckpt")
    try:
        net, meta = load_policy(path)
    except (OSError, CheckpointError) as e:
        raise ConfigError([f"--checkpoint: cannot load {path}: {e}"]) from None
    if meta.get("task") != cfg.task:
        raise ConfigError([f"--checkpoint: trained for task {meta.get('task')!r}, config says {cfg.task!r}"])
    grid = parse_grid(args.grid, cfg.task)
    if grid.size == 0:
        raise ConfigError(["--grid: empty grid"])
    if args.episodes < 1:
        raise ConfigError(["--episodes: must be >= 1"])
    cur = cfg.env.curriculum
    train_range = cur.vertical_cap if cfg.task == VERTICAL else cur.forward_cap
    from .env import JumpEnv
    probe = JumpEnv(_one_env(cfg), **cfg.env_kwargs())
    if probe.obs_dim != net.obs_dim or probe.act_dim != net.act_dim:
        raise ConfigError([f"--checkpoint: network expects obs {net.obs_dim}/act {net.act_dim}, "
                           f"environment gives {probe.obs_dim}/{probe.act_dim}"])
    with _threads(cfg.deterministic):
        res = evaluate(net, cfg.env, grid, args.episodes, seed=cfg.seed, randomize=args.randomize,
                       noise=args.randomize, train_range=train_range, env_kwargs=cfg.env_kwargs())
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "eval.csv")
    write_eval(csv_path, res)
    ood = sum(r["ood"] for r in res["rows"])
    summary = {"rows": res["n"], "success_rate": res["success_rate"], "mean_abs_error": res["mean_abs_error"],
               "out_of_distribution": ood, "csv": csv_path}
    atomic_write_text(os.path.join(cfg.out, "eval_summary.json"), _dump(summary) + "\n")
    if args.svg:
        from .plots import plot_eval
        summary["svg"] = plot_eval(res["rows"], cfg.task, os.path.join(cfg.out, "eval.svg"))
    print(json.dumps({k: _finite(v) for k, v in summary.items()}))
    return EXIT_OK


def _one_env(cfg: RunConfig):
    import copy
    env = copy.deepcopy(cfg.env)
    env.num_envs = 1
    return env


def cmd_check(args) -> int:
    from .checks import run_checks
    try:
        cfg = _resolve(args)
    except ConfigError as e:
        for err in e.errors:
            print(f"[FAIL] config: {err}")
        return EXIT_CONFIG
    print("[PASS] config: all fields valid")
    results = run_checks(cfg.geometry, cfg.actuator, cfg.filter, cfg.sim_params())
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_plot(args) -> int:
    from .plots import plot_curves, plot_eval
    try:
        header, rows = read_csv(args.csv)
    except (OSError, ValueError) as e:
        raise ConfigError([f"csv: {e}"]) from None
    out = args.out or os.path.splitext(args.csv)[0] + ".svg"
    if header.startswith("# jumpkit-curves"):
        path = plot_curves(rows, out)
    elif header.startswith("# jumpkit-eval"):
        path = plot_eval(rows, None, out)
    else:
        raise ConfigError([f"csv: cannot plot a table with header {header!r}"])
    print(path)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "check": cmd_check, "plot": cmd_plot}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except (Divergence, NumericalBlowup) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        diag = getattr(e, "diagnostics", None)
        if diag:
            print(json.dumps(diag, default=str), file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"I/O failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
