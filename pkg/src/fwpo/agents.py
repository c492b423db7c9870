"""NFWPO and the projection-based DDPG baselines.

All three agents share the critic, replay buffer, exploration, and target
networks; they differ only in how the actor is trained:

* ``nfwpo``: regress the actor onto Frank-Wolfe reference actions built from
  the projected current action and the critic's action-gradient.
* ``ddpg_projection``: deterministic policy gradient at the raw actor output;
  projection only happens when the action is executed.
* ``ddpg_shaping``: as above, with the stored reward penalized by the distance
  between the raw and the executed action.
"""

from dataclasses import dataclass, field

import numpy as np

from . import neural as nn
from .geometry import DEFAULT_TOL, GeometryError, Hyperplanes, Intersection

ALGOS = ("nfwpo", "ddpg_projection", "ddpg_shaping")


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool
    pre_violation: bool = False
    pre: np.ndarray = None


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    index: np.ndarray = None

    def __len__(self):
        return self.s.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity, state_dim, action_dim, rng=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, state_dim))
        self.done = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.pos = 0
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __len__(self):
        return self.size

    def add(self, t):
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = t.s, t.a, t.r, t.s2, t.done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n):
        if not 1 <= n <= self.size:
            raise ValueError(f"cannot sample {n} transitions from a buffer holding {self.size}")
        return self.rng.integers(0, self.size, size=n)

    def sample(self, n):
        idx = self.sample_indices(n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx],
                     self.done[idx].astype(float), idx)


@dataclass
class AgentConfig:
    algo: str = "nfwpo"
    fw_lr: float = 0.05
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.001
    noise_sigma: float = 0.1
    batch_size: int = 16
    gamma: float = 0.99
    shaping_weight: float = 0.0
    warmup_steps: int = 1000
    actor_update_period: int = 1
    hidden: tuple = (64, 64)
    actor_output: str = "tanh"
    action_scale: float = 1.0
    buffer_size: int = 1_000_000

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if not 0.0 < self.fw_lr <= 1.0:
            raise ValueError("fw_lr must lie in (0, 1]")
        if self.noise_sigma < 0 or self.batch_size < 1 or self.actor_update_period < 1:
            raise ValueError("need noise_sigma >= 0, batch_size >= 1, actor_update_period >= 1")
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.gamma < 1.0:
            raise ValueError("need tau in [0, 1] and gamma in [0, 1)")
        if self.shaping_weight < 0 or self.warmup_steps < 0:
            raise ValueError("shaping_weight and warmup_steps must be nonnegative")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class ActorCritic:
    actor: nn.DenseNet
    actor_target: nn.DenseNet
    critic: nn.DenseNet
    critic_target: nn.DenseNet
    actor_opt: nn.AdamState = None
    critic_opt: nn.AdamState = None

    def __post_init__(self):
        if self.actor_target.sizes != self.actor.sizes or self.critic_target.sizes != self.critic.sizes:
            raise ValueError("target networks must mirror the online networks")
        if self.actor_opt is None:
            self.actor_opt = nn.AdamState.for_net(self.actor)
        if self.critic_opt is None:
            self.critic_opt = nn.AdamState.for_net(self.critic)

    @classmethod
    def build(cls, state_dim, action_dim, hidden, actor_output, rng):
        actor = nn.init_net((state_dim, *hidden, action_dim), rng, output=actor_output)
        critic = nn.init_net((state_dim + action_dim, *hidden, 1), rng)
        return cls(actor, actor.copy(), critic, critic.copy())


class BatchGeometryError(GeometryError):
    def __init__(self, index, exc):
        super().__init__(f"geometry failure at batch state {index}: {exc}")
        self.index = index


class Agent:
    def __init__(self, config, state_dim, action_dim, constraint_of, init_rng, replay_rng=None):
        self.config = config
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.constraint_of = constraint_of
        self.nets = ActorCritic.build(state_dim, action_dim, config.hidden, config.actor_output, init_rng)
        self.buffer = ReplayBuffer(config.buffer_size, state_dim, action_dim, replay_rng)
        self.pre_violations = 0
        self.train_steps = 0
        self.actor_updates = 0
        self._bbox = {}

    def policy(self, s):
        """Raw (unprojected) actor output for one state or a batch."""
        return self.config.action_scale * nn.forward(self.nets.actor, s)

    def target_policy(self, s):
        return self.config.action_scale * nn.forward(self.nets.actor_target, s)

    def greedy_action(self, s):
        return self.constraint_of(s).project(self.policy(s))


def _critic_in(s, a):
    return np.concatenate([s, a], axis=-1)


def action_grad(nets, s, a, target=False):
    """``grad_a Q(s, a)`` for a batch, from the critic's input-gradient."""
    critic = nets.critic_target if target else nets.critic
    g = nn.input_grad(critic, _critic_in(s, a))
    return g[..., s.shape[-1]:]


def act(agent, s, explore, rng):
    cset = agent.constraint_of(s)
    pre = agent.policy(s)
    if explore and agent.config.noise_sigma > 0:
        pre = pre + agent.config.noise_sigma * rng.standard_normal(pre.shape)
    executed = cset.project(pre)
    return executed, pre, not cset.contains(pre, DEFAULT_TOL)


def critic_update(agent, batch):
    """One Adam step on the mean squared TD error; returns the pre-step loss."""
    nets, cfg = agent.nets, agent.config
    q_next = nn.forward(nets.critic_target, _critic_in(batch.s2, agent.target_policy(batch.s2)))[:, 0]
    y = batch.r + cfg.gamma * (1.0 - batch.done) * q_next
    x = _critic_in(batch.s, batch.a)
    q = nn.forward(nets.critic, x)[:, 0]
    err = q - y
    loss = float(np.mean(err ** 2))
    grads = nn.backward(nets.critic, x, (2.0 / len(batch)) * err[:, None])
    nn.adam_step(nets.critic, grads, nets.critic_opt, cfg.critic_lr)
    return loss


def reference_actions(agent, states, constraint_of=None):
    """Frank-Wolfe reference actions ``x + alpha (c - x)`` at the current actor and critic."""
    constraint_of = constraint_of or agent.constraint_of
    raw = agent.policy(states)
    sets = [constraint_of(s) for s in states]
    alpha = agent.config.fw_lr
    if all(cset is sets[0] for cset in sets):
        # state-independent set: batched oracles, per-state fallback on failure
        try:
            x = sets[0].project_many(raw)
            c = sets[0].lmo_many(action_grad(agent.nets, states, x))
            return x + alpha * (c - x)
        except (GeometryError, ValueError):
            pass
    x = np.empty_like(raw)
    for i, (cset, z) in enumerate(zip(sets, raw)):
        try:
            x[i] = cset.project(z)
        except (GeometryError, ValueError) as exc:
            raise BatchGeometryError(i, exc) from exc
    grad = action_grad(agent.nets, states, x)
    ref = np.empty_like(raw)
    for i, cset in enumerate(sets):
        try:
            c = cset.lmo(grad[i])
        except (GeometryError, ValueError) as exc:
            raise BatchGeometryError(i, exc) from exc
        ref[i] = x[i] + alpha * (c - x[i])
    return ref


def regression_gradient(agent, states, targets, weight=1.0):
    """Gradient of ``weight * sum_i ||pi(s_i) - target_i||^2`` w.r.t. the actor."""
    pi = agent.policy(states)
    upstream = 2.0 * weight * agent.config.action_scale * (pi - targets)
    return nn.backward(agent.nets.actor, states, upstream), float(np.sum((pi - targets) ** 2))


def dpg_gradient(agent, states):
    """Sample deterministic policy gradient (ascent direction) at the raw actor output."""
    dq = action_grad(agent.nets, states, agent.policy(states))
    return nn.backward(agent.nets.actor, states, agent.config.action_scale * dq / len(states))


def nfwpo_actor_update(agent, batch, constraint_of=None):
    """Regress the actor onto the reference actions; returns the pre-step loss."""
    ref = reference_actions(agent, batch.s, constraint_of)
    grads, loss = regression_gradient(agent, batch.s, ref)
    nn.adam_step(agent.nets.actor, grads, agent.nets.actor_opt, agent.config.actor_lr)
    return loss


def ddpg_actor_update(agent, batch):
    grads = dpg_gradient(agent, batch.s)
    # Adam descends, so feed it the negated ascent direction
    nn.adam_step(agent.nets.actor, grads.scaled(-1.0), agent.nets.actor_opt, agent.config.actor_lr)


def shape_reward(r, pre, executed, w):
    if w < 0:
        raise ValueError("shaping weight must be nonnegative")
    return r - w * float(np.linalg.norm(np.asarray(pre) - np.asarray(executed)))


def _has_equalities(cset):
    members = cset.members if isinstance(cset, Intersection) else (cset,)
    return any(isinstance(m, Hyperplanes) for m in members)


def sample_feasible(cset, rng, bbox=None, tries=100):
    """Random feasible action for the exploratory warmup phase.

    Full-dimensional sets: rejection sampling from the enclosing box, which is
    uniform on the set.  Sets with equality constraints (or after ``tries``
    misses): a Dirichlet-weighted combination of LMO vertices along random
    directions, which is feasible by convexity but not exactly uniform.
    """
    n = cset.dim
    if not _has_equalities(cset):
        if bbox is None:
            bbox = bounding_box(cset)
        lo, hi = bbox
        for _ in range(tries):
            z = rng.uniform(lo, hi)
            if cset.contains(z, 0.0):
                return z
    verts = np.stack([cset.lmo(rng.standard_normal(n)) for _ in range(n + 1)])
    return rng.dirichlet(np.ones(n + 1)) @ verts


def bounding_box(cset):
    eye = np.eye(cset.dim)
    hi = np.array([cset.lmo(e)[i] for i, e in enumerate(eye)])
    lo = np.array([cset.lmo(-e)[i] for i, e in enumerate(eye)])
    return lo, hi


def _warmup_action(agent, cset, rng):
    key = id(cset)
    if key not in agent._bbox:
        if len(agent._bbox) > 64:
            agent._bbox.clear()
        agent._bbox[key] = (cset, None if _has_equalities(cset) else bounding_box(cset))
    return sample_feasible(cset, rng, agent._bbox[key][1])


def train_step(agent, env, global_step, rng):
    """One interaction plus the learning updates it triggers; returns the stored transition."""
    cfg = agent.config
    s = env.state
    cset = env.constraint_of(s)
    if global_step < cfg.warmup_steps:
        executed = _warmup_action(agent, cset, rng)
        pre, violated = executed, False
    else:
        executed, pre, violated = act(agent, s, True, rng)
    s2, r, done = env.step(executed)
    if cfg.algo == "ddpg_shaping":
        r = shape_reward(r, pre, executed, cfg.shaping_weight)
    t = Transition(s, executed, r, s2, bool(env.terminal), violated, pre)
    agent.buffer.add(t)
    agent.pre_violations += int(violated)
    if done:
        env.reset()
    if global_step >= cfg.warmup_steps and len(agent.buffer) >= cfg.batch_size:
        batch = agent.buffer.sample(cfg.batch_size)
        critic_update(agent, batch)
        if global_step % cfg.actor_update_period == 0:
            if cfg.algo == "nfwpo":
                nfwpo_actor_update(agent, batch)
            else:
                ddpg_actor_update(agent, batch)
            agent.actor_updates += 1
        nn.soft_update(agent.nets.actor_target, agent.nets.actor, cfg.tau)
        nn.soft_update(agent.nets.critic_target, agent.nets.critic, cfg.tau)
        agent.train_steps += 1
    return t
