"""Simulated action-constrained environments.

All environments share one interface: ``reset(seed)``, ``constraint_of(state)``,
``step(action) -> (next_state, reward, done)``, plus ``state_dim``,
``action_dim`` and ``episode_length``.  ``step`` refuses actions outside the
current feasible set.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DEFAULT_TOL,
    Box,
    Halfspaces,
    Hyperplanes,
    Intersection,
    L2Ball,
    WeightedL1,
    from_dict,
)

EPS = 1e-3


class InfeasibleActionError(ValueError):
    pass


class Env:
    name = "env"
    state_dim = 0
    action_dim = 0
    episode_length = 1
    # true termination of the last step, as opposed to the episode time limit
    terminal = False

    def reset(self, seed=None):
        raise NotImplementedError

    def constraint_of(self, state):
        raise NotImplementedError

    def step(self, action):
        raise NotImplementedError

    def _check_action(self, action):
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},), got {action.shape}")
        cset = self.constraint_of(self.state)
        if not cset.contains(action, DEFAULT_TOL):
            raise InfeasibleActionError(
                f"{self.name}: action {np.round(action, 6).tolist()} violates the feasible set "
                f"by {cset.violation(action):.3g}")
        return action


# -- bike sharing ---------------------------------------------------------------


@dataclass
class BssConfig:
    n: int = 3
    m: int = 90
    C: int = 35
    weights: tuple = (0.5, 1.0, 1.0)  # move, lost, overflow
    d_lo: int = 5
    d_hi: int = 25
    episode_length: int = 48

    def __post_init__(self):
        if self.n < 2 or self.C <= 0 or self.m < 0:
            raise ValueError("need n >= 2 stations, capacity C > 0 and m >= 0 bikes")
        if self.m > self.n * self.C:
            raise ValueError(f"{self.m} bikes do not fit in {self.n} stations of capacity {self.C}")
        if not 0 <= self.d_lo <= self.d_hi:
            raise ValueError("need 0 <= d_lo <= d_hi")
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ValueError("weights are three nonnegative costs (move, lost, overflow)")
        if self.episode_length < 1:
            raise ValueError("episode_length must be positive")


@dataclass
class BssState:
    counts: np.ndarray
    demand: np.ndarray
    t: int = 0

    def vector(self):
        return np.concatenate([self.counts, self.demand.ravel()]).astype(float)


def largest_remainder(x, total, cap):
    """Integer vector near ``x`` with sum ``total`` and entries in ``[0, cap]``."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, cap)
    base = np.floor(x).astype(int)
    frac = x - base
    short = int(total - base.sum())
    # stable ordering keeps ties deterministic (lowest index first)
    if short > 0:
        for i in np.argsort(-frac, kind="stable"):
            if short == 0:
                break
            if base[i] < cap:
                base[i] += 1
                short -= 1
        # rounding noise can leave a deficit when many entries sit at the cap
        for i in np.argsort(base, kind="stable"):
            while short > 0 and base[i] < cap:
                base[i] += 1
                short -= 1
    elif short < 0:
        for i in np.argsort(frac, kind="stable"):
            if short == 0:
                break
            if base[i] > 0:
                base[i] -= 1
                short += 1
        for i in np.argsort(-base, kind="stable"):
            while short < 0 and base[i] > 0:
                base[i] -= 1
                short += 1
    return base


def _serve(demand, bikes):
    """Trips actually served from one station: proportional rationing, integer."""
    want = demand.sum()
    if want <= bikes:
        return demand.copy()
    share = demand * bikes / want
    return largest_remainder(share, bikes, demand.max())


def bss_constraint(cfg):
    n = cfg.n
    anchor = largest_remainder(np.full(n, cfg.m / n), cfg.m, cfg.C).astype(float)
    return Intersection([Box(np.zeros(n), np.full(n, float(cfg.C))),
                         Hyperplanes(np.ones((1, n)), [float(cfg.m)])], anchor)


def bss_step(cfg, state, action, rng, demand=None):
    """Rebalance to ``action``, then serve one period of demand.

    ``demand[i, j]`` is the number of trips wanted from station i to j; it is
    drawn uniformly from ``[d_lo, d_hi]`` per ordered pair unless given.
    """
    alloc = largest_remainder(action, cfg.m, cfg.C)
    moved = 0.5 * np.abs(alloc - state.counts).sum()
    if demand is None:
        demand = rng.integers(cfg.d_lo, cfg.d_hi + 1, size=(cfg.n, cfg.n))
        np.fill_diagonal(demand, 0)
    demand = np.asarray(demand, dtype=int)
    served = np.stack([_serve(demand[i], alloc[i]) for i in range(cfg.n)])
    lost = int((demand - served).sum())
    counts = alloc - served.sum(axis=1) + served.sum(axis=0)
    overflow = int(np.maximum(counts - cfg.C, 0).sum())
    w_move, w_lost, w_over = cfg.weights
    reward = -(w_move * moved + w_lost * lost + w_over * overflow)
    nxt = BssState(counts, demand, state.t + 1)
    return nxt, float(reward), nxt.t >= cfg.episode_length


class BssEnv(Env):
    name = "bss"

    def __init__(self, cfg=None, **kw):
        self.cfg = cfg if cfg is not None else BssConfig(**kw)
        self.state_dim = self.cfg.n + self.cfg.n ** 2
        self.action_dim = self.cfg.n
        self.episode_length = self.cfg.episode_length
        self.n_states = self.cfg.episode_length
        self._cset = bss_constraint(self.cfg)
        self.rng = np.random.default_rng()
        self.reset(0)

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        counts = largest_remainder(np.full(self.cfg.n, self.cfg.m / self.cfg.n), self.cfg.m, self.cfg.C)
        self._s = BssState(counts, np.zeros((self.cfg.n, self.cfg.n), dtype=int), 0)
        return self.state

    @property
    def state(self):
        return self._s.vector()

    def state_index(self):
        """Time step within the episode; the finite state index for tabular use."""
        return self._s.t

    def constraint_of(self, state):
        return self._cset

    def step(self, action, demand=None):
        action = self._check_action(action)
        self._s, r, done = bss_step(self.cfg, self._s, action, self.rng, demand)
        return self.state, r, done


# -- network utility --------------------------------------------------------------


@dataclass
class NetUtilConfig:
    # edges as (tail, head, capacity, base latency)
    edges: list = field(default_factory=lambda: [
        (0, 1, 50.0, 1.0), (0, 2, 50.0, 1.5), (1, 3, 50.0, 1.0),
        (2, 3, 50.0, 1.5), (1, 2, 50.0, 0.5), (2, 1, 50.0, 0.5)])
    # flows as (source, sink, candidate paths given as edge-index lists)
    flows: list = field(default_factory=lambda: [
        (0, 3, [[0, 2], [1, 3]]),
        (0, 3, [[0, 4, 3], [1, 5, 2]])])
    rate_max: float = 50.0
    phases: int = 4
    phase_amplitude: float = 0.25
    episode_length: int = 50

    def __post_init__(self):
        self.edges = [tuple(e) for e in self.edges]
        for tail, head, cap, base in self.edges:
            if cap <= 0 or base <= 0:
                raise ValueError("edge capacities and base latencies must be positive")
        for src, dst, paths in self.flows:
            for path in paths:
                node = src
                for e in path:
                    if not 0 <= e < len(self.edges) or self.edges[e][0] != node:
                        raise ValueError(f"path {path} does not connect {src} to {dst}")
                    node = self.edges[e][1]
                if node != dst:
                    raise ValueError(f"path {path} does not end at {dst}")
        if self.rate_max <= 0 or self.phases < 1 or self.episode_length < 1:
            raise ValueError("rate_max, phases and episode_length must be positive")

    @property
    def pairs(self):
        """(flow index, path) for every action coordinate."""
        return [(f, path) for f, (_, _, paths) in enumerate(self.flows) for path in paths]

    def incidence(self):
        """``H[e, k] = 1`` when action coordinate k routes over edge e."""
        H = np.zeros((len(self.edges), len(self.pairs)))
        for k, (_, path) in enumerate(self.pairs):
            H[path, k] = 1.0
        return H


def netutil_constraint(cfg):
    H = cfg.incidence()
    caps = np.array([e[2] for e in cfg.edges])
    K = H.shape[1]
    return Intersection([Box(np.zeros(K), np.full(K, cfg.rate_max)), Halfspaces(H, caps)],
                        np.zeros(K))


def netutil_reward(cfg, rates, phase=0):
    """Proportional-fairness utility of a rate assignment, plus per-edge loads."""
    rates = np.asarray(rates, dtype=float)
    H = cfg.incidence()
    caps = np.array([e[2] for e in cfg.edges])
    base = np.array([e[3] for e in cfg.edges])
    if cfg.phases > 1:
        offset = np.arange(len(cfg.edges)) / len(cfg.edges)
        base = base * (1.0 + cfg.phase_amplitude * np.sin(2 * np.pi * (phase / cfg.phases + offset)))
    load = H @ rates
    lat_edge = base / (1.0 - np.minimum(load / caps, 0.99))
    drop_edge = np.maximum(load - caps, 0.0)
    drop_frac = np.divide(drop_edge, load, out=np.zeros_like(load), where=load > 0)
    path_lat = H.T @ lat_edge
    path_drop = rates * (H.T @ drop_frac)
    total = 0.0
    for f in range(len(cfg.flows)):
        idx = [k for k, (g, _) in enumerate(cfg.pairs) if g == f]
        r = rates[idx]
        lat = r @ path_lat[idx] / r.sum() if r.sum() > 0 else path_lat[idx].mean()
        drop = path_drop[idx].sum()
        thr = r.sum() - drop
        total += np.log((thr + EPS) / ((drop + EPS) ** 0.5 * (lat + EPS) ** 1.5))
    return float(total), load


def netutil_step(cfg, state, action):
    phase, t = state
    reward, load = netutil_reward(cfg, action, phase)
    nxt = ((phase + 1) % cfg.phases, t + 1)
    return nxt, reward, nxt[1] >= cfg.episode_length, load


class NetUtilEnv(Env):
    name = "netutil"

    def __init__(self, cfg=None, **kw):
        self.cfg = cfg if cfg is not None else NetUtilConfig(**kw)
        self.action_dim = len(self.cfg.pairs)
        self.state_dim = self.cfg.phases + len(self.cfg.edges)
        self.episode_length = self.cfg.episode_length
        self._cset = netutil_constraint(self.cfg)
        self._caps = np.array([e[2] for e in self.cfg.edges])
        self.reset(0)

    def reset(self, seed=None):
        # the dynamics are deterministic; the seed only picks the starting phase
        phase = 0 if seed is None else int(np.random.default_rng(seed).integers(self.cfg.phases))
        self._s = (phase, 0)
        self._util = np.zeros(len(self.cfg.edges))
        return self.state

    @property
    def state(self):
        onehot = np.zeros(self.cfg.phases)
        onehot[self._s[0]] = 1.0
        return np.concatenate([onehot, self._util])

    def constraint_of(self, state):
        return self._cset

    def step(self, action):
        action = self._check_action(action)
        self._s, r, done, load = netutil_step(self.cfg, self._s, action)
        self._util = load / self._caps
        return self.state, r, done


# -- point mass -------------------------------------------------------------------


REACHER_SUM = 0.1
REACHER_RADIUS = np.sqrt(0.02)


def reacher_constraint(dim=2):
    if dim != 2:
        raise ValueError("the reacher constraint is defined for two actuators")
    return Intersection([Halfspaces([[1.0, 1.0], [-1.0, -1.0]], [REACHER_SUM, REACHER_SUM]),
                         L2Ball(np.zeros(2), REACHER_RADIUS)], np.zeros(2))


def power_constraint(velocity, budget, bound):
    n = velocity.size
    return Intersection([Box(np.full(n, -bound), np.full(n, bound)),
                         WeightedL1(np.abs(velocity), budget)], np.zeros(n))


@dataclass
class PointMassConfig:
    dim: int = 2
    dt: float = 0.1
    friction: float = 0.5
    goal: tuple = (0.3, -0.2)
    start_range: float = 0.3
    variant: str = "reacher"
    power_budget: float = 0.5
    action_bound: float = 1.0
    constraint: dict = None
    episode_length: int = 100
    goal_radius: float = 0.01
    # redraw the goal each episode (uniform in +-goal_range) and append it to the state
    random_goal: bool = True
    goal_range: float = 0.3

    def __post_init__(self):
        if self.dt <= 0 or self.friction < 0 or self.episode_length < 1:
            raise ValueError("need dt > 0, friction >= 0, episode_length >= 1")
        if self.variant not in ("reacher", "power", "custom"):
            raise ValueError(f"unknown point-mass variant {self.variant!r}")
        if self.variant == "power" and not (self.power_budget > 0 and self.action_bound > 0):
            raise ValueError("power variant needs a positive budget and action bound")
        if self.variant == "custom" and self.constraint is None:
            raise ValueError("custom variant needs a constraint description")
        self.goal = tuple(float(g) for g in self.goal)
        if len(self.goal) != self.dim:
            raise ValueError("goal dimension must match dim")


def pointmass_step(cfg, state, action):
    """State is ``(pos, vel)``, or ``(pos, vel, goal)`` with a per-episode goal."""
    d = cfg.dim
    pos, vel = state[:d], state[d:2 * d]
    goal = state[2 * d:] if state.size > 2 * d else np.array(cfg.goal)
    vel = vel + cfg.dt * (action - cfg.friction * vel)
    pos = pos + cfg.dt * vel
    dist = float(np.linalg.norm(pos - goal))
    reward = -dist - 0.01 * float(np.linalg.norm(action))
    return np.concatenate([pos, vel, state[2 * d:]]), reward, dist < cfg.goal_radius


class PointMassEnv(Env):
    name = "pointmass"

    def __init__(self, cfg=None, **kw):
        self.cfg = cfg if cfg is not None else PointMassConfig(**kw)
        self.action_dim = self.cfg.dim
        self.state_dim = (3 if self.cfg.random_goal else 2) * self.cfg.dim
        self.episode_length = self.cfg.episode_length
        if self.cfg.variant == "reacher":
            self._cset = reacher_constraint(self.cfg.dim)
        elif self.cfg.variant == "custom":
            self._cset = from_dict(self.cfg.constraint)
            if self._cset.dim != self.cfg.dim:
                raise ValueError("custom constraint dimension must match dim")
        else:
            self._cset = None
        self.rng = np.random.default_rng()
        self.reset(0)

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        pos = self.rng.uniform(-self.cfg.start_range, self.cfg.start_range, size=self.cfg.dim)
        self._x = np.concatenate([pos, np.zeros(self.cfg.dim)])
        if self.cfg.random_goal:
            goal = self.rng.uniform(-self.cfg.goal_range, self.cfg.goal_range, size=self.cfg.dim)
            self._x = np.concatenate([self._x, goal])
        self._t = 0
        return self.state

    @property
    def state(self):
        return self._x.copy()

    def constraint_of(self, state):
        if self._cset is not None:
            return self._cset
        vel = np.asarray(state, dtype=float)[self.cfg.dim:2 * self.cfg.dim]
        return power_constraint(vel, self.cfg.power_budget, self.cfg.action_bound)

    def step(self, action):
        action = self._check_action(action)
        self._x, r, reached = pointmass_step(self.cfg, self._x, action)
        self._t += 1
        self.terminal = reached
        return self.state, r, reached or self._t >= self.episode_length


ENVS = {"bss": (BssEnv, BssConfig), "netutil": (NetUtilEnv, NetUtilConfig),
        "pointmass": (PointMassEnv, PointMassConfig)}


def make_env(name, **cfg):
    try:
        cls, cfg_cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    return cls(cfg_cls(**cfg))
