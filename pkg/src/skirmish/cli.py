"""Command-line entry points: train, eval, heatmap, bullets.

Every command is deterministic given (config, seed) in single-threaded mode,
writes self-describing outputs (config hash + seed in a header comment), and
exits 0 on success or nonzero after printing a machine-readable error line
(a one-line JSON object on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    RunConfig,
    config_hash,
    desk_run_config,
    load_run_config,
    save_run_config,
)
from .env import make_env
from .eval import evaluate_vs_bt, play_policy_match
from .experiments import (
    bullet_range_session,
    bullets_to_csv,
    collect_heatmap,
    grid_to_csv,
    grid_to_pgm,
)
from .mapdef import load_map
from .navmesh import build_navmesh
from .net import ParamSet, load_checkpoint, save_checkpoint
from .trainer import train_single_thread, train_threaded


def _fail(code: str, message: str) -> int:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return 1


def _resolve_run_config(args) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = desk_run_config()
    if getattr(args, "pure_rl", False):
        cfg = replace(cfg, mode="pure")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, total_steps=args.steps)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg.validate()


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out / "config.json")
    env_cfg = cfg.env_config()
    ps = ParamSet(replace(cfg.net, seed=cfg.seed))
    chash = config_hash(cfg)
    metrics_lines: list[str] = []

    def log(line: str) -> None:
        metrics_lines.append(line)
        if not args.quiet:
            print(line)

    ckpt_path = out / "checkpoint.bin"
    if cfg.train.actor_count > 1:
        env_factory = lambda: make_env(env_cfg)  # noqa: E731
        ps, rows = train_threaded(
            env_factory,
            ps,
            cfg.train,
            total_steps=cfg.total_steps,
            seed=cfg.seed,
            checkpoint_path=ckpt_path,
            log_fn=log,
        )
    else:
        env = make_env(env_cfg)
        ps, rows = train_single_thread(
            env,
            ps,
            cfg.train,
            total_steps=cfg.total_steps,
            seed=cfg.seed,
            checkpoint_path=ckpt_path,
            checkpoint_every=args.checkpoint_every,
            log_fn=log,
        )
    header = f"# config_hash={chash} seed={cfg.seed}"
    body = "version,steps,episodes,mean_reward,win_rate,policy_loss,value_loss,entropy,staleness"
    (out / "metrics.csv").write_text("\n".join([header, body, *metrics_lines]) + "\n")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    ps_a = load_checkpoint(args.ckpt)
    cfg = desk_run_config(mode=args.mode, seed=args.seed)
    cfg = replace(cfg, map=args.map)
    env_cfg = cfg.env_config()
    if args.vs == "bt":
        env = make_env(env_cfg)
        stats = evaluate_vs_bt(env, ps_a, episodes=args.episodes, base_seed=args.seed)
    elif args.vs.startswith("ckpt:"):
        ps_b = load_checkpoint(args.vs.split(":", 1)[1])
        m = load_map(cfg.map)
        mesh = build_navmesh(m)
        stats = play_policy_match(
            m, mesh, env_cfg, ps_a, ps_b, episodes=args.episodes, base_seed=args.seed
        )
    else:
        return _fail("bad_opponent", f"--vs must be 'bt' or 'ckpt:PATH', got {args.vs!r}")
    summary = stats.summary()
    summary["config_hash"] = config_hash(cfg)
    summary["seed"] = args.seed
    print(json.dumps(summary, indent=2))
    return 0


def cmd_heatmap(args) -> int:
    ps = load_checkpoint(args.ckpt)
    cfg = desk_run_config(mode=args.mode, seed=args.seed)
    cfg = replace(cfg, map=args.map)
    env = make_env(cfg.env_config())
    grid, distinct = collect_heatmap(
        env, ps, episodes=args.episodes, base_seed=args.seed, sample=args.sample
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comment = f"config_hash={config_hash(cfg)} seed={args.seed} episodes={args.episodes}"
    (out / "heatmap.csv").write_text(grid_to_csv(grid, comment))
    (out / "heatmap.pgm").write_text(grid_to_pgm(grid, comment))
    print(
        json.dumps(
            {
                "grid": [grid.shape[1], grid.shape[0]],
                "samples": int(grid.sum()),
                "distinct_cells": distinct,
                "out": str(out),
            }
        )
    )
    return 0


def cmd_bullets(args) -> int:
    load_checkpoint(args.ckpt)  # shooting rules are policy-independent; validate anyway
    rows = bullet_range_session(
        distance=args.distance,
        shots=args.shots,
        seed=args.seed,
        unconstrained=args.unconstrained,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mode = "unconstrained" if args.unconstrained else "ruled"
    comment = f"mode={mode} distance={args.distance} seed={args.seed}"
    path = out / f"bullets_{mode}.csv"
    path.write_text(bullets_to_csv(rows, comment))
    offsets = np.array([r.offset for r in rows]) if rows else np.zeros((0, 2))
    rms = float(np.sqrt((offsets**2).sum(axis=1).mean())) if len(rows) else 0.0
    print(json.dumps({"shots": len(rows), "rms_offset": rms, "out": str(path)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skirmish",
        description="Tactical-shooter simulation and rule-enhanced RL training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy against the scripted opponent")
    p_train.add_argument("--config", help="run-config JSON (defaults: desk-scale)")
    p_train.add_argument("--pure-rl", action="store_true", dest="pure_rl",
                         help="mask navmesh actions permanently")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--steps", type=int, default=None, help="override step budget")
    p_train.add_argument("--out", default=None, help="override output directory")
    p_train.add_argument("--checkpoint-every", type=int, default=0)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--vs", required=True, help="'bt' or 'ckpt:PATH'")
    p_eval.add_argument("--episodes", type=int, required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--map", default="farm_small")
    p_eval.add_argument("--mode", default="rules", choices=["rules", "pure"])
    p_eval.set_defaults(func=cmd_eval)

    p_heat = sub.add_parser("heatmap", help="traversal heatmap over eval episodes")
    p_heat.add_argument("--ckpt", required=True)
    p_heat.add_argument("--episodes", type=int, required=True)
    p_heat.add_argument("--out", required=True)
    p_heat.add_argument("--seed", type=int, default=0)
    p_heat.add_argument("--map", default="farm_small")
    p_heat.add_argument("--mode", default="rules", choices=["rules", "pure"])
    p_heat.add_argument("--sample", action="store_true",
                        help="sample the policy instead of argmax")
    p_heat.set_defaults(func=cmd_heatmap)

    p_bul = sub.add_parser("bullets", help="bullet impact scatter at a fixed distance")
    p_bul.add_argument("--ckpt", required=True)
    p_bul.add_argument("--distance", type=float, required=True)
    p_bul.add_argument("--shots", type=int, required=True)
    p_bul.add_argument("--out", required=True)
    p_bul.add_argument("--seed", type=int, default=0)
    p_bul.add_argument("--unconstrained", action="store_true",
                       help="Gaussian baseline without truncation")
    p_bul.set_defaults(func=cmd_bullets)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail("file_not_found", str(exc))
    except ValueError as exc:
        return _fail("invalid_argument", str(exc))
    except RuntimeError as exc:
        return _fail("runtime_error", str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
