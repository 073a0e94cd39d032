"""Experiment orchestration: the two-phase schedule, evaluation, persistence.

Per seed: bootstrap, phase-1 training with periodic evaluation, a silent
phase switch, phase-2 training. Each evaluation interval appends one CSV
row; the column order is fixed (see CSV_COLUMNS) with per-cluster slots for
up to six clusters. Evaluation uses its own RNG keyed by (seed, step) and a
separate env session, so it injects nothing into training: runs with
different eval intervals produce identical trajectories.

Seeds run in parallel worker processes; each run is a pure function of
(config, seed), so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .agents import DynaAgent, eval_stream, save_agent, seed_streams
from .config import ExperimentConfig, make_config
from .envs import EnvSession, Phase, Variant, make_env
from .errors import ConfigError
from .values import optimal_eval_return

K_MAX_COLUMNS = 6
CSV_COLUMNS = (["step", "phase", "eval_return", "optimal_return",
                "n_clusters", "detect_events"]
               + [f"reward_err_k{i}" for i in range(K_MAX_COLUMNS)]
               + [f"size_k{i}" for i in range(K_MAX_COLUMNS)]
               + ["evictions", "dead_entries"])

# Two-sided 95% Student-t quantiles for df = 1..30; larger df uses 1.96.
_T95 = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262,
        2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101,
        2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052,
        2.048, 2.045, 2.042]


def t_quantile_95(df: int) -> float:
    if df < 1:
        return float("nan")
    return _T95[df - 1] if df <= len(_T95) else 1.96


def evaluate(agent: DynaAgent, env, variant: Variant, phase: Phase,
             episodes: int, rng: np.random.Generator, gamma: float) -> float:
    """Mean discounted return of the greedy policy from evaluation resets.

    Reads the agent's Q function only; agent and training-env state are
    untouched.
    """
    session = EnvSession(env, variant, rng, mode="eval")
    session.set_phase(phase)
    total = 0.0
    for _ in range(episodes):
        session.reset()
        ret, disc = 0.0, 1.0
        while True:
            a = agent.qf.greedy(session.current_obs())
            _, _, _, _, r, done, trunc = session.step(a)
            ret += disc * r
            disc *= gamma
            if done or trunc:
                break
        total += ret
    return total / episodes


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class _MetricsWriter:
    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_COLUMNS)

    def row(self, step: int, phase: int, eval_return: float, optimal: float,
            n_clusters: int, detect_events: int, reward_errs: dict,
            sizes: dict, evictions: int, dead: int) -> None:
        keys = sorted(sizes)[:K_MAX_COLUMNS]
        errs = [reward_errs.get(k, float("nan")) for k in keys]
        errs += [float("nan")] * (K_MAX_COLUMNS - len(errs))
        szs = [sizes.get(k, 0) for k in keys]
        szs += [0] * (K_MAX_COLUMNS - len(szs))
        self._w.writerow([step, phase, _fmt(float(eval_return)),
                          _fmt(float(optimal)), n_clusters, detect_events]
                         + [_fmt(float(e)) for e in errs]
                         + [str(int(s)) for s in szs]
                         + [str(int(evictions)), str(int(dead))])

    def close(self) -> None:
        self._fh.close()


def run_seed(cfg: ExperimentConfig, seed: int, out_dir) -> dict:
    """Train one agent for the full two-phase schedule; writes the seed's files."""
    t_start = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    rngs = seed_streams(seed)
    env = make_env(cfg.environment, cfg.grid_size)
    variant = Variant(cfg.variant)
    session = EnvSession(env, variant, rngs["env"], mode="train")
    session.set_phase(Phase.ONE)
    agent = DynaAgent(cfg, env, rngs)
    agent.bootstrap(session)
    t0 = session.steps_taken

    opt = {Phase.ONE: optimal_eval_return(env, variant, Phase.ONE, cfg.gamma),
           Phase.TWO: optimal_eval_return(env, variant, Phase.TWO, cfg.gamma)}
    total = cfg.phase1_steps + cfg.phase2_steps
    writer = _MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    records = []

    def record(grid_step: int) -> float:
        phase = Phase.ONE if grid_step < cfg.phase1_steps else Phase.TWO
        rng = eval_stream(seed, grid_step)
        ret = evaluate(agent, env, variant, phase, cfg.eval_episodes, rng,
                       cfg.gamma)
        errs = agent.reward_errors(rng)
        stats = agent.store_stats()
        writer.row(grid_step, int(phase), ret, opt[phase],
                   len(agent.cluster_ids()), agent.detect_events, errs,
                   stats["sizes"], stats["evictions"], stats["dead"])
        records.append((grid_step, int(phase), ret, opt[phase]))
        return ret

    record(0)
    next_eval = cfg.eval_interval
    stopped_early = False
    while session.steps_taken - t0 < total and not stopped_early:
        t = session.steps_taken - t0
        session.set_phase(Phase.ONE if t < cfg.phase1_steps else Phase.TWO)
        agent.train_step(session)
        t = session.steps_taken - t0
        while next_eval <= min(t, total):
            ret = record(next_eval)
            if (cfg.stop_when_adapted and next_eval >= cfg.phase1_steps
                    and not math.isnan(opt[Phase.TWO])
                    and ret >= cfg.adapted_threshold * opt[Phase.TWO]):
                stopped_early = True
            next_eval += cfg.eval_interval
    writer.close()

    summary = _summarize(cfg, records, agent, stopped_early)
    summary["seed"] = seed
    summary["wall_seconds"] = time.perf_counter() - t_start
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    save_agent(os.path.join(out_dir, "checkpoint.npz"), agent)
    return summary


def _summarize(cfg, records, agent, stopped_early) -> dict:
    p1 = [r for r in records if r[1] == 1 and r[0] > 0]
    p2 = [r for r in records if r[1] == 2]

    def ratio(rec):
        return rec[2] / rec[3] if rec[3] and not math.isnan(rec[3]) else float("nan")

    phase1_score = ratio(p1[-1]) if p1 else float("nan")
    phase2_score = ratio(p2[-1]) if p2 else float("nan")
    adaptation_steps = None
    for rec in p2:
        r = ratio(rec)
        if not math.isnan(r) and r >= cfg.adapted_threshold:
            adaptation_steps = rec[0] - cfg.phase1_steps
            break
    return {
        "phase1_score": phase1_score,
        "phase2_score": phase2_score,
        "phase1_return": p1[-1][2] if p1 else float("nan"),
        "phase2_return": p2[-1][2] if p2 else float("nan"),
        "adaptation_steps": adaptation_steps,
        "detect_events": agent.detect_events,
        "n_clusters": len(agent.cluster_ids()),
        "stopped_early": stopped_early,
    }


def _seed_task(args) -> tuple[int, dict | None, str | None]:
    cfg_dict, seed, out_dir = args
    preset = cfg_dict.pop("preset", "grid_desk")
    cfg = make_config(preset, **cfg_dict)
    try:
        return seed, run_seed(cfg, seed, out_dir), None
    except Exception as exc:   # other seeds continue; the CLI reports failure
        os.makedirs(out_dir, exist_ok=True)
        diag = {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(diag, f, indent=2, sort_keys=True)
        return seed, None, diag["error"]


def write_manifest(cfg: ExperimentConfig, out_dir) -> None:
    manifest = {"config": cfg.to_dict(), "seeds": list(cfg.seeds),
                "code_version": __version__,
                "created_unix": int(time.time())}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int | None = None,
                   progress=None) -> dict:
    """Run every seed, then aggregate. Returns {seed: summary-or-None}."""
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(cfg, out_dir)
    tasks = [(cfg.to_dict(), seed, os.path.join(out_dir, f"seed_{seed}"))
             for seed in cfg.seeds]
    results: dict[int, dict | None] = {}
    workers = workers or min(len(tasks), os.cpu_count() or 1)
    if workers <= 1 or len(tasks) == 1:
        it = map(_seed_task, tasks)
        for seed, summary, err in it:
            results[seed] = summary
            if progress:
                progress(seed, summary, err)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, summary, err in pool.map(_seed_task, tasks):
                results[seed] = summary
                if progress:
                    progress(seed, summary, err)
    aggregate_run(out_dir)
    return results


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def aggregate_run(run_dir) -> str:
    """Cross-seed aggregate CSV plus the learning-curve figure.

    Aggregates over evaluation steps present in every seed's metrics file
    (early-stopped seeds contribute up to their last interval).
    """
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = json.load(f)
    seeds = manifest["seeds"]
    per_seed = {}
    for seed in seeds:
        path = os.path.join(run_dir, f"seed_{seed}", "metrics.csv")
        if os.path.exists(path):
            per_seed[seed] = read_metrics(path)
    if not per_seed:
        raise ConfigError(f"no seed metrics found under {run_dir}")

    common = None
    for m in per_seed.values():
        steps = set(int(s) for s in m["step"])
        common = steps if common is None else (common & steps)
    grid = sorted(common)

    out_path = os.path.join(run_dir, "aggregate.csv")
    n = len(per_seed)
    ordered = sorted(per_seed)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "phase", "optimal_return", "mean_return",
                    "ci95_lo", "ci95_hi", "n_seeds"]
                   + [f"return_seed{s}" for s in ordered])
        for g in grid:
            vals = []
            phase = optimal = None
            for s in ordered:
                m = per_seed[s]
                i = int(np.flatnonzero(m["step"] == g)[0])
                vals.append(m["eval_return"][i])
                phase = int(m["phase"][i])
                optimal = m["optimal_return"][i]
            arr = np.array(vals)
            mean = float(np.mean(arr))
            if n > 1:
                half = float(t_quantile_95(n - 1) * arr.std(ddof=1) / np.sqrt(n))
            else:
                half = 0.0
            w.writerow([g, phase, _fmt(float(optimal)), _fmt(mean),
                        _fmt(mean - half), _fmt(mean + half), n]
                       + [_fmt(float(v)) for v in arr])

    from .plots import learning_curve_figure
    fig_path = os.path.join(run_dir, "learning_curves.png")
    learning_curve_figure({_run_label(manifest): out_path},
                          manifest["config"]["phase1_steps"], fig_path)
    return out_path


def _run_label(manifest: dict) -> str:
    c = manifest["config"]
    return f"{c['agent']} ({c['environment']}/{c['variant']})"
