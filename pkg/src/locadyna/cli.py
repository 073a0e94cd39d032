"""Command-line entry points: run experiments, render heatmaps, aggregate runs."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .agents import load_agent
from .config import load_config
from .envs import Phase, make_env
from .errors import ConfigError
from .harness import aggregate_run, run_experiment
from .heatmap import emit_heatmap, oracle_heatmap, save_heatmap_csv


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed_offset:
        cfg.seeds = [s + args.seed_offset for s in cfg.seeds]
    out_dir = args.out or f"runs/{cfg.environment}_{cfg.variant}_{cfg.agent}"

    def progress(seed, summary, err):
        if err:
            print(f"seed {seed}: FAILED ({err})")
        else:
            print(f"seed {seed}: phase1 {summary['phase1_score']:.3f} "
                  f"phase2 {summary['phase2_score']:.3f} "
                  f"adapt {summary['adaptation_steps']} "
                  f"[{summary['wall_seconds']:.1f}s]")

    results = run_experiment(cfg, out_dir, workers=args.workers,
                             progress=progress)
    failed = [s for s, r in results.items() if r is None]
    print(f"wrote {out_dir} ({len(results) - len(failed)}/{len(results)} seeds ok)")
    return 1 if failed else 0


def _cmd_heatmap(args) -> int:
    agent, cfg = load_agent(args.checkpoint)
    env = make_env(cfg.environment, cfg.grid_size)
    phase = Phase(args.phase)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)

    matrix = emit_heatmap(agent, env, phase, resolution=args.resolution)
    csv_path = os.path.join(out_dir, f"heatmap_{cfg.agent}_phase{args.phase}.csv")
    save_heatmap_csv(csv_path, matrix)
    oracle = oracle_heatmap(env, phase, resolution=args.resolution)
    oracle_path = os.path.join(out_dir, f"heatmap_oracle_phase{args.phase}.csv")
    save_heatmap_csv(oracle_path, oracle)

    from .plots import heatmap_figure
    lo = float(min(matrix.min(), oracle.min()))
    hi = float(max(matrix.max(), oracle.max()))
    heatmap_figure(matrix, csv_path.replace(".csv", ".png"),
                   title=f"{cfg.agent} predicted reward (phase {args.phase})",
                   vmin=lo, vmax=hi)
    heatmap_figure(oracle, oracle_path.replace(".csv", ".png"),
                   title=f"true reward (phase {args.phase})", vmin=lo, vmax=hi)
    print(f"wrote {csv_path}")
    return 0


def _cmd_aggregate(args) -> int:
    run_dir = args.dir
    if os.path.exists(os.path.join(run_dir, "manifest.json")):
        print(f"wrote {aggregate_run(run_dir)}")
        return 0
    children = sorted(
        d for d in os.listdir(run_dir)
        if os.path.exists(os.path.join(run_dir, d, "manifest.json")))
    if not children:
        raise ConfigError(f"no manifest.json under {run_dir}")
    labeled = {}
    phase1 = None
    for d in children:
        child = os.path.join(run_dir, d)
        agg = aggregate_run(child)
        with open(os.path.join(child, "manifest.json")) as f:
            manifest = json.load(f)
        c = manifest["config"]
        labeled[f"{c['agent']}/{c['variant']}"] = agg
        phase1 = c["phase1_steps"]
    from .plots import learning_curve_figure
    fig = os.path.join(run_dir, "comparison.png")
    learning_curve_figure(labeled, phase1, fig)
    print(f"wrote {fig}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="locadyna",
        description="Two-phase local-change adaptation experiments for "
                    "deep Dyna-Q agents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_hm = sub.add_parser("heatmap", help="render reward heatmaps from a checkpoint")
    p_hm.add_argument("--checkpoint", required=True)
    p_hm.add_argument("--resolution", type=int, default=40)
    p_hm.add_argument("--phase", type=int, choices=(1, 2), default=2)
    p_hm.add_argument("--out", default=None)
    p_hm.set_defaults(func=_cmd_heatmap)

    p_agg = sub.add_parser("aggregate", help="aggregate seed metrics in a run dir")
    p_agg.add_argument("--dir", required=True)
    p_agg.set_defaults(func=_cmd_aggregate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
