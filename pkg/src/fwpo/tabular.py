"""Tabular Frank-Wolfe policy optimization on finite-state smooth MDPs.

The policy is a table ``theta[s]`` of feasible actions.  Each iteration
evaluates the policy exactly (a dense linear solve), takes the action
gradient of the Q-function at every state, and moves each ``theta[s]`` a
state-dependent fraction of the way toward the linear-maximization vertex
of its feasible set.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Box, ConstraintSet, Intersection, L2Ball

FEAS_TOL = 1e-6


@dataclass
class SmoothMdp:
    """Finite states, continuous actions, analytic action-gradients.

    ``transition(s, a)`` returns the next-state distribution (length ``M``) and
    ``transition_grad(s, a)`` its Jacobian of shape ``(M, N)``.  ``L`` is the
    smoothness constant used by the step-size schedule; it is supplied, not
    derived.
    """

    M: int
    N: int
    reward: Callable
    reward_grad: Callable
    transition: Callable
    transition_grad: Callable
    gamma: float
    constraint: Callable
    mu: np.ndarray
    L: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.shape != (self.M,) or abs(self.mu.sum() - 1.0) > 1e-10 or self.mu.min() <= 0:
            raise ValueError("mu must be a strictly positive distribution over the states")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def mu_min(self):
        return float(self.mu.min())

    def diameters(self):
        return np.array([self.constraint(s).diameter() for s in range(self.M)])

    def gap_bound(self):
        """Upper bound on the sum of squared effective gaps over a whole run."""
        d_max = self.diameters().max()
        return 2.0 * self.L * d_max ** 2 / ((1.0 - self.gamma) ** 3 * self.mu_min ** 2)

    def check(self, rng, samples=20, h=1e-5, rtol=1e-4):
        """Verify the model invariants on random feasible actions; raises on failure."""
        for s in range(self.M):
            cset = self.constraint(s)
            for _ in range(samples):
                a = cset.project(rng.normal(scale=cset.diameter(), size=self.N))
                p = self.transition(s, a)
                if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
                    raise ValueError(f"transition({s}, .) is not a distribution")
                r = self.reward(s, a)
                if not 0.0 <= r <= 1.0:
                    raise ValueError(f"reward({s}, .) = {r} outside [0, 1]")
                fd_r = np.array([(self.reward(s, a + h * e) - self.reward(s, a - h * e)) / (2 * h)
                                 for e in np.eye(self.N)])
                fd_p = np.stack([(self.transition(s, a + h * e) - self.transition(s, a - h * e)) / (2 * h)
                                 for e in np.eye(self.N)], axis=1)
                for fd, an, what in ((fd_r, self.reward_grad(s, a), "reward"),
                                     (fd_p, self.transition_grad(s, a), "transition")):
                    err = np.abs(fd - an).max() / max(np.abs(fd).max(), 1e-8)
                    if err > rtol and np.abs(fd - an).max() > 1e-9:
                        raise ValueError(f"{what}_grad mismatch at state {s}: rel err {err:.2e}")


@dataclass
class TabularPolicy:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)

    def action(self, s):
        return self.theta[s]

    def copy(self):
        return TabularPolicy(self.theta.copy())

    def is_feasible(self, mdp, tol=FEAS_TOL):
        return all(mdp.constraint(s).contains(self.theta[s], tol) for s in range(mdp.M))


@dataclass
class FwpoDiagnostics:
    g: np.ndarray
    alpha: np.ndarray
    G: float
    J: float
    J_next: float = float("nan")
    directions: np.ndarray = field(default=None, repr=False)


def _require_feasible(mdp, pi):
    for s in range(mdp.M):
        if not mdp.constraint(s).contains(pi.theta[s], FEAS_TOL):
            raise ValueError(f"policy action at state {s} is infeasible")


def transition_matrix(mdp, pi):
    """Row-stochastic ``P[i, j] = p(j | i, pi(i))``."""
    return np.array([mdp.transition(s, pi.theta[s]) for s in range(mdp.M)])


def reward_vector(mdp, pi):
    return np.array([mdp.reward(s, pi.theta[s]) for s in range(mdp.M)])


def exact_v(mdp, pi):
    """Solve ``V = r + gamma P V`` by a dense LU solve."""
    P = transition_matrix(mdp, pi)
    r = reward_vector(mdp, pi)
    system = np.eye(mdp.M) - mdp.gamma * P
    try:
        return np.linalg.solve(system, r)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("policy evaluation failed; transition matrix is corrupt") from exc


def exact_q(mdp, V, s, a):
    """One-step lookahead ``r(s, a) + gamma <p(.|s, a), V>``."""
    return mdp.reward(s, a) + mdp.gamma * mdp.transition(s, a) @ V


def exact_q_grad(mdp, pi, s, V=None):
    """``grad_a Q(s, a; pi)`` at ``a = pi(s)``, with ``V`` the exact value of ``pi``."""
    if V is None:
        V = exact_v(mdp, pi)
    a = pi.theta[s]
    return mdp.reward_grad(s, a) + mdp.gamma * mdp.transition_grad(s, a).T @ V


def objective(mdp, pi):
    return float(mdp.mu @ exact_v(mdp, pi))


def fwpo_step(mdp, pi, diameters=None):
    """One FWPO iteration; returns the updated policy and its diagnostics."""
    _require_feasible(mdp, pi)
    if diameters is None:
        diameters = mdp.diameters()
    V = exact_v(mdp, pi)
    theta = pi.theta
    new = theta.copy()
    g = np.zeros(mdp.M)
    alpha = np.zeros(mdp.M)
    dirs = np.zeros_like(theta)
    scale = (1.0 - mdp.gamma) * mdp.mu_min / mdp.L
    for s in range(mdp.M):
        grad = exact_q_grad(mdp, pi, s, V)
        c = mdp.constraint(s).lmo(grad)
        dirs[s] = c
        g[s] = (c - theta[s]) @ grad
        # clamp keeps the update a convex combination even for a too-small L
        alpha[s] = min(max(scale * g[s] / diameters[s] ** 2, 0.0), 1.0) if diameters[s] > 0 else 0.0
        if alpha[s] > 0.0:
            new[s] = (1.0 - alpha[s]) * theta[s] + alpha[s] * c
    diag = FwpoDiagnostics(g=g, alpha=alpha, G=float(np.sqrt(np.sum(g ** 2))),
                           J=float(mdp.mu @ V), directions=dirs)
    return TabularPolicy(new), diag


def run_fwpo(mdp, pi0, K, return_policy=False):
    """Run ``K`` FWPO iterations from ``pi0``; returns one record per iteration.

    With ``return_policy`` the final policy is returned alongside the records.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    diameters = mdp.diameters()
    pi = pi0
    history = []
    for _ in range(K):
        pi, diag = fwpo_step(mdp, pi, diameters)
        history.append(diag)
    for prev, nxt in zip(history, history[1:]):
        prev.J_next = nxt.J
    history[-1].J_next = objective(mdp, pi)
    return (history, pi) if return_policy else history


def estimate_smoothness(mdp, rng, samples=200, h=1e-4, safety=2.0):
    """Conservative smoothness constant from sampled directional curvatures.

    Samples second differences of ``J`` along random unit directions in the
    policy table, and of ``Q(s, .; pi)`` along random unit action directions,
    at random feasible policies.  Returns ``safety`` times the largest
    magnitude seen.
    """
    worst = 0.0
    for _ in range(samples):
        theta = np.array([mdp.constraint(s).project(rng.normal(size=mdp.N)) for s in range(mdp.M)])
        d = rng.normal(size=theta.shape)
        d /= np.linalg.norm(d)
        J = [objective(mdp, TabularPolicy(theta + t * d)) for t in (-h, 0.0, h)]
        worst = max(worst, abs(J[0] - 2 * J[1] + J[2]) / h ** 2)
        pi = TabularPolicy(theta)
        V = exact_v(mdp, pi)
        s = int(rng.integers(mdp.M))
        u = rng.normal(size=mdp.N)
        u /= np.linalg.norm(u)
        Q = [exact_q(mdp, V, s, theta[s] + t * u) for t in (-h, 0.0, h)]
        worst = max(worst, abs(Q[0] - 2 * Q[1] + Q[2]) / h ** 2)
    return safety * worst


# -- model builders -----------------------------------------------------------------


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def synthetic_mdp(seed=0, M=3, N=2, gamma=0.9, L=None, constraints=None):
    """Random smooth MDP: softmax transitions and sigmoid rewards, linear in ``a``.

    ``p(.|s, a) = softmax(W[s] a + c[s])`` and ``r(s, a) = sigmoid(w[s] a + b[s])``.
    Default feasible sets cycle through a box, a ball, and a box-ball
    intersection.  When ``L`` is omitted it is estimated by
    :func:`estimate_smoothness`.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(scale=1.5, size=(M, M, N))
    c = rng.normal(size=(M, M))
    w = rng.normal(scale=2.0, size=(M, N))
    b = rng.normal(scale=0.5, size=M)
    if constraints is None:
        pool = [
            Box(-np.ones(N), np.ones(N)),
            L2Ball(np.zeros(N), 1.0),
            Intersection([Box(-0.5 * np.ones(N), np.ones(N)), L2Ball(np.full(N, 0.2), 0.8)],
                         np.full(N, 0.2)),
        ]
        constraints = [pool[s % len(pool)] for s in range(M)]

    def reward(s, a):
        return float(_sigmoid(w[s] @ a + b[s]))

    def reward_grad(s, a):
        sg = _sigmoid(w[s] @ a + b[s])
        return sg * (1.0 - sg) * w[s]

    def transition(s, a):
        return _softmax(W[s] @ a + c[s])

    def transition_grad(s, a):
        p = _softmax(W[s] @ a + c[s])
        return p[:, None] * (W[s] - p @ W[s])

    mdp = SmoothMdp(M, N, reward, reward_grad, transition, transition_grad, gamma,
                    lambda s: constraints[s], np.full(M, 1.0 / M), 1.0)
    mdp.L = estimate_smoothness(mdp, rng) if L is None else float(L)
    return mdp


def quadratic_bandit(target, constraint, curvature=1.0, gamma=0.1, L=None):
    """Single-state MDP with ``r(a) = 1 - ||a - target||^2 / curvature``.

    With a self-loop transition ``Q(a) = r(a) + gamma V``, so the constrained
    optimum is the projection of ``target`` onto the feasible set.  The default
    ``L`` is the exact curvature of ``J = r / (1 - gamma)``.
    """
    target = np.asarray(target, dtype=float)
    N = target.size

    def reward(s, a):
        return float(1.0 - np.sum((a - target) ** 2) / curvature)

    def reward_grad(s, a):
        return -2.0 * (a - target) / curvature

    if L is None:
        L = 2.0 / (curvature * (1.0 - gamma))
    return SmoothMdp(1, N, reward, reward_grad, lambda s, a: np.ones(1),
                     lambda s, a: np.zeros((1, N)), gamma, lambda s: constraint,
                     np.ones(1), L)


def action_free_mdp(P, r, gamma, N=1, constraint=None):
    """MDP whose rewards and transitions ignore the action (for closed-form checks)."""
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    M = r.size
    cset = constraint if constraint is not None else Box(-np.ones(N), np.ones(N))
    return SmoothMdp(M, N, lambda s, a: float(r[s]), lambda s, a: np.zeros(N),
                     lambda s, a: P[s], lambda s, a: np.zeros((M, N)), gamma,
                     lambda s: cset, np.full(M, 1.0 / M), 1.0)


# -- sample-based mode ----------------------------------------------------------------


class SampleFwpo:
    """Model-free tabular FWPO on an environment with a finite state index.

    A small critic over (one-hot state, action) is trained like the DDPG
    critic; the Frank-Wolfe direction at each sampled state uses the critic's
    action-gradient at the table entry, and the step is the fixed ``fw_lr``.
    Exploration is epsilon-greedy with uniform-random feasible actions, so
    every executed action is feasible.  The feasible set must not depend on
    the state (true for bike sharing).  Monotone improvement is not
    guaranteed here (the critic is an estimate); ``history`` logs the mean
    Frank-Wolfe gap per update.
    """

    def __init__(self, env, settings, init_rng, replay_rng=None):
        from . import neural as nn
        from .agents import ReplayBuffer

        self.nn = nn
        self.s = dict(settings)
        self.M = env.n_states
        self.N = env.action_dim
        anchor = env.constraint_of(env.state).anchor
        self.theta = np.tile(anchor, (self.M, 1))
        self.theta_target = self.theta.copy()
        sizes = (self.M + self.N, *self.s["hidden"], 1)
        self.critic = nn.init_net(sizes, init_rng)
        self.critic_target = self.critic.copy()
        self.opt = nn.AdamState.for_net(self.critic)
        self.buffer = ReplayBuffer(self.s["buffer_size"], self.M, self.N, replay_rng)
        self.pre_violations = 0
        self.history = []

    def _onehot(self, i):
        out = np.zeros(self.M)
        out[min(i, self.M - 1)] = 1.0
        return out

    def greedy_action(self, env, state=None):
        return self.theta[min(env.state_index(), self.M - 1)].copy()

    def train_step(self, env, global_step, rng):
        from .agents import Transition, sample_feasible

        nn = self.nn
        i = env.state_index()
        s = np.array(env.state, dtype=float)
        cset = env.constraint_of(env.state)
        if global_step < self.s["warmup_steps"] or rng.random() < self.s["epsilon"]:
            a = sample_feasible(cset, rng)
        else:
            a = self.theta[i].copy()
        s2, r, done = env.step(a)
        # the critic sees one-hot state indices; the caller gets the observation
        self.buffer.add(Transition(self._onehot(i), a, r, self._onehot(env.state_index()), bool(done)))
        t = Transition(s, a, r, np.array(s2, dtype=float), bool(done), False, a)
        if done:
            env.reset()
        if global_step >= self.s["warmup_steps"] and len(self.buffer) >= self.s["batch_size"]:
            b = self.buffer.sample(self.s["batch_size"])
            idx_next = np.argmax(b.s2, axis=1)
            q_next = nn.forward(self.critic_target, np.hstack([b.s2, self.theta_target[idx_next]]))[:, 0]
            y = b.r + self.s["gamma"] * (1.0 - b.done) * q_next
            x = np.hstack([b.s, b.a])
            err = nn.forward(self.critic, x)[:, 0] - y
            grads = nn.backward(self.critic, x, (2.0 / len(b)) * err[:, None])
            nn.adam_step(self.critic, grads, self.opt, self.s["critic_lr"])
            states = np.unique(np.argmax(b.s, axis=1))
            eye = np.eye(self.M)[states]
            g = nn.input_grad(self.critic, np.hstack([eye, self.theta[states]]))[:, self.M:]
            c = cset.lmo_many(g)
            gaps = np.einsum("ij,ij->i", c - self.theta[states], g)
            self.theta[states] += self.s["fw_lr"] * (c - self.theta[states])
            self.history.append(float(gaps.mean()))
            nn.soft_update(self.critic_target, self.critic, self.s["tau"])
            if global_step % self.s["actor_target_period"] == 0:
                self.theta_target = self.theta.copy()
        return t
