import csv
import math
import os

import numpy as np
import pytest

from fwpo import neural as nn
from fwpo.envs import BssEnv, Env
from fwpo.geometry import Box
from fwpo.harness import (
    ConfigError,
    aggregate,
    evaluate,
    parse_config,
    read_metrics,
    run_training,
    stream,
    streams,
)
from fwpo.harness.cli import main, parse_seeds, UsageError
from fwpo.harness.run import AGGREGATE_COLUMNS, METRIC_COLUMNS
from fwpo.tabular import SampleFwpo

SMALL = """
[env]
name = pointmass
variant = reacher

[algo]
algo = {algo}
warmup_steps = 50
hidden = (8,)

[train]
total_steps = 150
eval_every = 50
eval_episodes = 2
{extra}
"""


def small_config(algo="nfwpo", extra=""):
    return parse_config(SMALL.format(algo=algo, extra=extra))


def write_config(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- configuration ---------------------------------------------------------------


def test_config_defaults_resolved():
    cfg = small_config()
    agent = cfg.agent_config()
    assert agent.batch_size == 16 and agent.noise_sigma == 0.02 and agent.hidden == (8,)
    assert small_config("ddpg_projection").agent_config().batch_size == 64
    power = parse_config("[env]\nname = pointmass\nvariant = power\n[train]\ntotal_steps = 20000\n")
    assert power.agent_config().fw_lr == 0.01
    assert parse_config("[env]\nname = netutil\n").agent_config().actor_update_period == 50


def test_config_inline_comments():
    cfg = parse_config("[env]\nname = pointmass   ; which env\nvariant = power ; budget set\n"
                       "[algo]\nhidden = (16, 16)  ; small\n[train]\ntotal_steps = 20000\n")
    assert cfg.env_config().variant == "power" and cfg.agent_config().hidden == (16, 16)


@pytest.mark.parametrize("text", [
    "[env]\nname = pointmass\nspeed = 3\n",
    "[env]\nname = pointmass\n[algo]\nlearning_rate = 0.1\n",
    "[env]\nname = pointmass\n[train]\nsteps = 10\n",
    "[env]\nname = pointmass\n[extra]\nx = 1\n",
    "[env]\nname = mujoco\n",
    "[env]\nname = pointmass\n[algo]\nalgo = sac\n",
    "[env]\nname = pointmass\n[train]\ntotal_steps = 10\n",
    "[env]\nname = pointmass\n[algo]\nalgo = tabular_fwpo\n",
    "[algo]\nalgo = nfwpo\n",
    "[env]\nname = pointmass\n[algo]\nfw_lr = 2.0\n",
])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_rng_streams_independent_and_reproducible():
    a, b = streams(3), streams(3)
    for name in a:
        assert np.array_equal(a[name].random(5), b[name].random(5))
    draws = {name: stream(3, name).random(1000) for name in ("env", "explore", "init", "replay")}
    names = list(draws)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            assert abs(np.corrcoef(draws[names[i]], draws[names[j]])[0, 1]) < 0.15
    assert not np.array_equal(stream(3, "env").random(5), stream(4, "env").random(5))


# -- evaluation ------------------------------------------------------------------


class ScriptedEnv(Env):
    """Episode ``i`` (reset seed) pays ``returns[i]`` in one step."""

    name = "scripted"
    state_dim = 1
    action_dim = 1

    def __init__(self, returns):
        self.returns = returns
        self.state = np.zeros(1)

    def reset(self, seed=None):
        self.seed = seed
        return self.state

    def constraint_of(self, state):
        return Box([0.0], [1.0])

    def step(self, action):
        return self.state, self.returns[self.seed], True


def test_evaluate_mean_and_population_std():
    policy = lambda env, s: np.zeros(1)  # noqa: E731
    mean, std = evaluate(policy, ScriptedEnv({10: 1.0, 11: 2.0, 12: 3.0}), 3, seed=10)
    assert mean == pytest.approx(2.0) and std == pytest.approx(math.sqrt(2.0 / 3.0))
    assert evaluate(policy, ScriptedEnv({0: 0.0}), 1, seed=0) == (0.0, 0.0)
    with pytest.raises(ValueError):
        evaluate(policy, ScriptedEnv({}), 0, seed=0)


# -- metrics and aggregation -----------------------------------------------------


def _write(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        w.writerows(rows)


def test_aggregate_arithmetic(tmp_path):
    paths = []
    for k, (ret, viol) in enumerate([(1.0, 10), (2.0, 20), (6.0, 60)]):
        p = tmp_path / f"m{k}.csv"
        _write(p, [[5, ret, 0.0, viol, 0], [10, 2 * ret, 0.0, 2 * viol, 0]])
        paths.append(str(p))
    out = tmp_path / "agg.csv"
    summary = tmp_path / "summary.txt"
    aggregate(paths, out, summary)
    rows = list(csv.reader(open(out)))
    assert tuple(rows[0]) == AGGREGATE_COLUMNS
    step, mean, std, vmean, vstd, n = rows[1]
    assert int(step) == 5 and float(mean) == pytest.approx(3.0)
    assert float(std) == pytest.approx(np.std([1.0, 2.0, 6.0]))
    assert float(vmean) == pytest.approx(30.0) and float(vstd) == pytest.approx(np.std([10, 20, 60]))
    assert int(n) == 3
    text = summary.read_text()
    # final mean over the last (up to 10) evaluations, then across seeds
    assert f"final_mean_return={float(np.mean([1.5, 3.0, 9.0]))!r}" in text


def test_aggregate_rejects_mismatched_steps(tmp_path):
    _write(tmp_path / "a.csv", [[5, 0.0, 0.0, 0, 0]])
    _write(tmp_path / "b.csv", [[6, 0.0, 0.0, 0, 0]])
    with pytest.raises(ValueError):
        aggregate([str(tmp_path / "a.csv"), str(tmp_path / "b.csv")], tmp_path / "agg.csv")


def test_metrics_rows_must_advance(tmp_path):
    _write(tmp_path / "bad.csv", [[5, 0.0, 0.0, 3, 0], [10, 0.0, 0.0, 2, 0]])
    with pytest.raises(ValueError):
        read_metrics(tmp_path / "bad.csv")


# -- training runs ---------------------------------------------------------------


@pytest.mark.parametrize("algo", ["nfwpo", "ddpg_projection", "ddpg_shaping"])
def test_run_is_byte_identical(tmp_path, algo):
    cfg = small_config(algo)
    a = run_training(cfg, 1, str(tmp_path / "a"))
    b = run_training(cfg, 1, str(tmp_path / "b"))
    assert open(a.paths["metrics"], "rb").read() == open(b.paths["metrics"], "rb").read()
    assert open(a.paths["actor"]).read() == open(b.paths["actor"]).read()
    assert a.metrics.column("step") == [50, 100, 150]
    assert all(w == 0 for w in a.metrics.column("wall_ms"))


def test_run_with_only_warmup(tmp_path):
    cfg = parse_config(SMALL.format(algo="nfwpo", extra="").replace("total_steps = 150", "total_steps = 50"))
    result = run_training(cfg, 0, str(tmp_path))
    assert result.pre_violations == 0
    assert result.metrics.column("cum_pre_violations") == [0]


def test_event_log_matches_violation_count(tmp_path):
    cfg = parse_config(SMALL.format(algo="nfwpo", extra="event_log = True")
                       .replace("hidden = (8,)", "hidden = (8,)\nnoise_sigma = 0.3"))
    result = run_training(cfg, 2, str(tmp_path))
    with open(result.paths["events"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 150
    assert sum(int(r["pre_violation"]) for r in rows) == result.pre_violations
    assert result.metrics.column("cum_pre_violations")[-1] == result.pre_violations
    assert result.pre_violations > 0
    manifest = open(result.paths["manifest"]).read()
    assert f"run.total_pre_violations={result.pre_violations}" in manifest
    assert "algo.noise_sigma=0.3" in manifest and "run.seed=2" in manifest


def test_sample_fwpo_smoke_on_bss():
    env = BssEnv()
    env.reset(0)
    settings = dict(fw_lr=0.05, critic_lr=0.002, gamma=0.9, tau=0.01, epsilon=0.1,
                    actor_target_period=10, buffer_size=500, warmup_steps=30, batch_size=16, hidden=(8,))
    learner = SampleFwpo(env, settings, np.random.default_rng(0), np.random.default_rng(1))
    cset = env.constraint_of(env.state)
    theta0 = learner.theta.copy()
    rng = np.random.default_rng(2)
    for k in range(120):
        t = learner.train_step(env, k, rng)
        assert cset.contains(t.a, 1e-6)
    assert len(learner.history) == 90
    assert not np.array_equal(learner.theta, theta0)
    assert all(cset.contains(row, 1e-6) for row in learner.theta)
    assert all(g >= -1e-9 for g in learner.history)


def test_tabular_run_writes_policy(tmp_path):
    cfg = parse_config("""
[env]
name = bss
[algo]
algo = tabular_fwpo
warmup_steps = 20
hidden = (8,)
[train]
total_steps = 96
eval_every = 48
eval_episodes = 1
event_log = True
""")
    result = run_training(cfg, 0, str(tmp_path))
    with open(result.paths["events"]) as fh:
        rows = list(csv.reader(fh))
    # step, pre_violation, reward, 12 observation entries, 3 actions
    assert {len(row) for row in rows} == {18}
    theta = np.loadtxt(result.paths["policy"])
    assert theta.shape == (48, 3)
    assert np.allclose(theta.sum(axis=1), 90.0)


# -- command line ----------------------------------------------------------------


def test_parse_seeds():
    assert parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert parse_seeds("3,1") == [3, 1]
    with pytest.raises(UsageError):
        parse_seeds("a..b")


def test_cli_help_and_usage_errors(tmp_path, capsys):
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0
    assert main(["train", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["train", "--config", "x.ini", "--bogus"]) == 1
    assert main([]) == 1
    bad = write_config(tmp_path, "[env]\nname = pointmass\nspeed = 1\n")
    assert main(["train", "--config", bad]) == 1
    assert "speed" in capsys.readouterr().err


def test_cli_train_eval_round_trip(tmp_path, monkeypatch, capsys):
    path = write_config(tmp_path, SMALL.format(algo="nfwpo", extra=""))
    out = tmp_path / "env_out"
    monkeypatch.setenv("FWPO_OUT_DIR", str(out))
    assert main(["train", "--config", path, "--seed", "3", "--quiet"]) == 0
    assert (out / "metrics_seed3.csv").exists() and (out / "actor_seed3.txt").exists()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "actor_seed3.txt"), "--env", "pointmass",
                 "--episodes", "2", "--config", path]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("mean_return=") and lines[1].startswith("std_return=")
    # the actor expects the 6-dim random-goal state; a bss env does not match
    assert main(["eval", "--checkpoint", str(out / "actor_seed3.txt"), "--env", "bss"]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "none.txt"), "--env", "pointmass"]) == 1


def test_cli_sweep_writes_all_seeds(tmp_path):
    path = write_config(tmp_path, SMALL.format(algo="ddpg_projection", extra=""))
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", path, "--seeds", "0..4", "--out", str(out), "--quiet"]) == 0
    files = sorted(os.listdir(out))
    assert [f for f in files if f.startswith("metrics_")] == [f"metrics_seed{k}.csv" for k in range(5)]
    assert "aggregate.csv" in files and "aggregate_summary.txt" in files
    rows = list(csv.reader(open(out / "aggregate.csv")))
    assert len(rows) == 4 and rows[-1][-1] == "5"


def test_checkpoint_loads(tmp_path):
    result = run_training(small_config(), 0, str(tmp_path))
    actor = nn.load(result.paths["actor"])
    assert actor.sizes == (6, 8, 2)
