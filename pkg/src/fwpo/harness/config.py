"""Experiment configuration: an INI file with ``[env]``, ``[algo]`` and ``[train]``.

Values are Python literals (``0.05``, ``(64, 64)``, ``"reacher"``); bare words
are read as strings, and ``;`` starts a comment.  Every key must be known: a typo is an error, not a
silently ignored setting.

    [env]
    name = pointmass
    variant = reacher

    [algo]
    algo = nfwpo
    fw_lr = 0.05

    [train]
    total_steps = 50000
    eval_every = 2500
    seeds = (0, 1, 2, 3, 4)
"""

import ast
import configparser
import dataclasses
from dataclasses import dataclass, field

from ..agents import AgentConfig
from ..envs import ENVS

ALGOS = ("nfwpo", "ddpg_projection", "ddpg_shaping", "tabular_fwpo")

# per-environment agent defaults; buffer sizes and the power budget are desk-scale
AGENT_DEFAULTS = {
    "pointmass": dict(fw_lr=0.05, noise_sigma=0.02, shaping_weight=1 / 7, warmup_steps=1000,
                      actor_output="tanh", buffer_size=10_000),
    "pointmass/power": dict(fw_lr=0.01, noise_sigma=0.1, shaping_weight=3.0, warmup_steps=10_000,
                            actor_output="tanh", buffer_size=1_000_000),
    "netutil": dict(fw_lr=0.05, noise_sigma=3.0, shaping_weight=0.25, warmup_steps=10_000,
                    actor_output="relu", actor_update_period=50, buffer_size=50_000),
    "bss": dict(fw_lr=0.05, noise_sigma=5.0, shaping_weight=4.0, warmup_steps=10_000,
                actor_output="relu", buffer_size=1_000_000),
}

# sample-based tabular FWPO on bike sharing
TABULAR_DEFAULTS = dict(fw_lr=0.05, critic_lr=0.002, gamma=0.9, tau=0.01, epsilon=0.1,
                        actor_target_period=100, buffer_size=10_000, warmup_steps=10_000,
                        batch_size=64, hidden=(30,))

TRAIN_KEYS = {
    "total_steps": 20_000,
    "eval_every": 5_000,
    "eval_episodes": 10,
    "seeds": (0, 1, 2, 3, 4),
    "out_dir": "runs",
    "record_wall_time": False,
    "event_log": False,
    "checkpoint": True,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env_name: str
    env: dict = field(default_factory=dict)
    algo: str = "nfwpo"
    agent: dict = field(default_factory=dict)
    total_steps: int = 20_000
    eval_every: int = 5_000
    eval_episodes: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    record_wall_time: bool = False
    event_log: bool = False
    checkpoint: bool = True

    def __post_init__(self):
        if self.env_name not in ENVS:
            raise ConfigError(f"env.name must be one of {sorted(ENVS)}, got {self.env_name!r}")
        if self.algo not in ALGOS:
            raise ConfigError(f"algo.algo must be one of {ALGOS}, got {self.algo!r}")
        cfg_cls = ENVS[self.env_name][1]
        known = {f.name for f in dataclasses.fields(cfg_cls)}
        bad = sorted(set(self.env) - known)
        if bad:
            raise ConfigError(f"unknown env keys for {self.env_name}: {bad}")
        try:
            self.env_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid env settings: {exc}") from exc
        if self.algo == "tabular_fwpo":
            if self.env_name != "bss":
                raise ConfigError("tabular_fwpo runs on the bss environment only")
            bad = sorted(set(self.agent) - set(TABULAR_DEFAULTS))
        else:
            bad = sorted(set(self.agent) - {f.name for f in dataclasses.fields(AgentConfig)} - {"algo"})
        if bad:
            raise ConfigError(f"unknown algo keys: {bad}")
        if self.algo != "tabular_fwpo":
            try:
                self.agent_config()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid algo settings: {exc}") from exc
        if self.eval_episodes < 1 or self.eval_every < 1 or self.total_steps < 1:
            raise ConfigError("total_steps, eval_every and eval_episodes must be positive")
        if self.total_steps < self.resolved_agent()["warmup_steps"]:
            raise ConfigError("total_steps must be at least the warmup length")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def env_config(self):
        return ENVS[self.env_name][1](**self.env)

    def defaults_key(self):
        if self.env_name == "pointmass" and self.env.get("variant") == "power":
            return "pointmass/power"
        return self.env_name

    def resolved_agent(self):
        """Agent settings after applying environment defaults."""
        if self.algo == "tabular_fwpo":
            return {**TABULAR_DEFAULTS, **self.agent}
        out = dict(AGENT_DEFAULTS[self.defaults_key()])
        out["batch_size"] = 16 if self.algo == "nfwpo" else 64
        out.update(self.agent)
        out["algo"] = self.algo
        return out

    def agent_config(self):
        return AgentConfig(**self.resolved_agent())

    def manifest_items(self):
        items = [("env.name", self.env_name)]
        env_cfg = dataclasses.asdict(self.env_config())
        items += [(f"env.{k}", env_cfg[k]) for k in sorted(env_cfg)]
        items.append(("algo.algo", self.algo))
        agent = self.resolved_agent()
        items += [(f"algo.{k}", agent[k]) for k in sorted(agent) if k != "algo"]
        for k in TRAIN_KEYS:
            items.append((f"train.{k}", getattr(self, k)))
        return items


def _value(raw):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def parse_config(text, source="<config>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    extra = sorted(set(parser.sections()) - {"env", "algo", "train"})
    if extra:
        raise ConfigError(f"{source}: unknown sections {extra}")
    if not parser.has_option("env", "name"):
        raise ConfigError(f"{source}: env.name is required")
    env = {k: _value(v) for k, v in parser["env"].items() if k != "name"}
    algo_sec = dict(parser["algo"]) if parser.has_section("algo") else {}
    algo = _value(algo_sec.pop("algo", "nfwpo"))
    agent = {k: _value(v) for k, v in algo_sec.items()}
    train = {k: _value(v) for k, v in (parser["train"].items() if parser.has_section("train") else [])}
    bad = sorted(set(train) - set(TRAIN_KEYS))
    if bad:
        raise ConfigError(f"{source}: unknown train keys {bad}")
    try:
        return ExperimentConfig(env_name=str(_value(parser["env"]["name"])), env=env, algo=algo,
                                agent=agent, **{**TRAIN_KEYS, **train})
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
