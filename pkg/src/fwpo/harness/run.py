"""Training loop, evaluation, metric files, and cross-seed aggregation."""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from .. import neural as nn
from ..agents import Agent, train_step
from ..envs import ENVS
from ..tabular import SampleFwpo
from .rng import streams

METRIC_COLUMNS = ("step", "eval_mean_return", "eval_std_return", "cum_pre_violations", "wall_ms")
AGGREGATE_COLUMNS = ("step", "mean_return", "std_return", "mean_cum_pre_violations",
                     "std_cum_pre_violations", "n_seeds")
FINAL_EVALS = 10


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)

    def append(self, step, mean, std, violations, wall_ms):
        if self.rows and (step <= self.rows[-1][0] or violations < self.rows[-1][3]):
            raise ValueError("metrics rows must advance in step with nondecreasing violations")
        self.rows.append((int(step), float(mean), float(std), int(violations), int(wall_ms)))

    def column(self, name):
        k = METRIC_COLUMNS.index(name)
        return [row[k] for row in self.rows]

    def final_mean(self, last=FINAL_EVALS):
        returns = self.column("eval_mean_return")[-last:]
        return float(np.mean(returns)) if returns else float("nan")


@dataclass
class RunResult:
    seed: int
    metrics: RunMetrics
    paths: dict
    pre_violations: int = 0


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def make_env(cfg):
    return ENVS[cfg.env_name][0](cfg.env_config())


def evaluate(policy, env, episodes, seed):
    """Noise-free returns over ``episodes`` episodes; ``(mean, population std)``.

    ``policy(env, state)`` must return a feasible action.  Episode ``i`` starts
    from ``env.reset(seed + i)``, which fully reinitializes the environment.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    returns = []
    for i in range(episodes):
        s = env.reset(seed + i)
        total, done = 0.0, False
        while not done:
            s, r, done = env.step(policy(env, s))
            total += r
        returns.append(total)
    returns = np.array(returns)
    return float(returns.mean()), float(returns.std())


def build_learner(cfg, env, rngs):
    if cfg.algo == "tabular_fwpo":
        learner = SampleFwpo(env, cfg.resolved_agent(), rngs["init"], rngs["replay"])
        return learner, learner.greedy_action, lambda k: learner.train_step(env, k, rngs["explore"])
    agent = Agent(cfg.agent_config(), env.state_dim, env.action_dim, env.constraint_of,
                  rngs["init"], rngs["replay"])
    return agent, lambda e, s: agent.greedy_action(s), lambda k: train_step(agent, env, k, rngs["explore"])


def _prefix(out_dir, name, seed, ext):
    return os.path.join(out_dir, f"{name}_seed{seed}.{ext}")


def write_metrics(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in metrics.rows:
            w.writerow([_fmt(v) for v in row])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        m = RunMetrics()
        for row in reader:
            m.append(int(row[0]), float(row[1]), float(row[2]), int(row[3]), int(row[4]))
    return m


def write_manifest(cfg, seed, path, extra=()):
    lines = [f"{k}={_fmt(v)}" for k, v in cfg.manifest_items()]
    lines += [
        f"run.seed={seed}",
        f"run.version=fwpo {__version__}",
        "run.optimizer=adam(beta1=0.9, beta2=0.999, eps=1e-8)",
        "run.init=uniform(+-1/sqrt(fan_in)); final layer uniform(+-3e-3)",
        "run.eval_std=population (divide by n)",
        "run.rng_streams=env, explore, init, replay from SeedSequence([seed, crc32(name)])",
    ]
    lines += [f"{k}={_fmt(v)}" for k, v in extra]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_training(cfg, seed, out_dir=None, progress=None):
    """Train one seed; writes metrics, manifest and checkpoints to ``out_dir``."""
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    rngs = streams(seed)
    env, eval_env = make_env(cfg), make_env(cfg)
    env.reset(int(rngs["env"].integers(2 ** 31)))
    learner, policy, step_fn = build_learner(cfg, env, rngs)
    metrics = RunMetrics()
    paths = {"metrics": _prefix(out_dir, "metrics", seed, "csv"),
             "manifest": _prefix(out_dir, "manifest", seed, "txt")}
    events = None
    if cfg.event_log:
        paths["events"] = _prefix(out_dir, "events", seed, "csv")
        events = open(paths["events"], "w", newline="")
        ew = csv.writer(events, lineterminator="\n")
        ew.writerow(["step", "pre_violation", "reward"]
                    + [f"s{i}" for i in range(env.state_dim)] + [f"a{i}" for i in range(env.action_dim)])
    start = time.perf_counter()
    violations = 0
    try:
        for k in range(cfg.total_steps):
            t = step_fn(k)
            violations += int(t.pre_violation)
            if events is not None:
                ew.writerow([k, int(t.pre_violation), _fmt(t.r)] + [_fmt(v) for v in t.s]
                            + [_fmt(v) for v in t.a])
            if (k + 1) % cfg.eval_every == 0:
                mean, std = evaluate(policy, eval_env, cfg.eval_episodes, seed)
                wall = (time.perf_counter() - start) * 1000.0 if cfg.record_wall_time else 0
                metrics.append(k + 1, mean, std, violations, wall)
                if progress is not None:
                    progress(seed, k + 1, mean, violations)
    finally:
        if events is not None:
            events.close()
    write_metrics(metrics, paths["metrics"])
    if cfg.checkpoint:
        if cfg.algo == "tabular_fwpo":
            paths["policy"] = _prefix(out_dir, "policy", seed, "txt")
            np.savetxt(paths["policy"], learner.theta, fmt="%.17g")
        else:
            paths["actor"] = _prefix(out_dir, "actor", seed, "txt")
            paths["critic"] = _prefix(out_dir, "critic", seed, "txt")
            nn.save(learner.nets.actor, paths["actor"])
            nn.save(learner.nets.critic, paths["critic"])
    write_manifest(cfg, seed, paths["manifest"], [("run.total_pre_violations", violations)])
    return RunResult(seed, metrics, paths, violations)


def aggregate(metric_paths, out_path, summary_path=None):
    """Per-step cross-seed mean and population std of returns and violation counts."""
    runs = [read_metrics(p) for p in metric_paths]
    if not runs:
        raise ValueError("nothing to aggregate")
    steps = runs[0].column("step")
    if any(r.column("step") != steps for r in runs):
        raise ValueError("runs disagree on evaluation steps")
    R = np.array([r.column("eval_mean_return") for r in runs])
    V = np.array([r.column("cum_pre_violations") for r in runs], dtype=float)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for j, step in enumerate(steps):
            w.writerow([step, _fmt(R[:, j].mean()), _fmt(R[:, j].std()),
                        _fmt(V[:, j].mean()), _fmt(V[:, j].std()), len(runs)])
    finals = [r.final_mean() for r in runs]
    if summary_path is not None:
        lines = [f"final_evals={FINAL_EVALS}"]
        lines += [f"final_mean_return.{os.path.basename(p)}={_fmt(f)}" for p, f in zip(metric_paths, finals)]
        lines.append(f"final_mean_return={_fmt(np.mean(finals))}")
        lines.append(f"final_std_return={_fmt(np.std(finals))}")
        lines.append(f"final_mean_cum_pre_violations={_fmt(V[:, -1].mean())}")
        with open(summary_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return steps, R, V


def run_sweep(cfg, seeds, out_dir, jobs=1, progress=None):
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_training, [cfg] * len(seeds), seeds, [out_dir] * len(seeds)))
    else:
        results = [run_training(cfg, s, out_dir, progress) for s in seeds]
    agg = os.path.join(out_dir, "aggregate.csv")
    aggregate([r.paths["metrics"] for r in results], agg, os.path.join(out_dir, "aggregate_summary.txt"))
    return results, agg
