import numpy as np
import pytest
from scipy import stats

from fwpo import neural as nn
from fwpo.agents import (
    Agent,
    AgentConfig,
    Batch,
    BatchGeometryError,
    ReplayBuffer,
    Transition,
    act,
    critic_update,
    ddpg_actor_update,
    dpg_gradient,
    nfwpo_actor_update,
    reference_actions,
    regression_gradient,
    sample_feasible,
    shape_reward,
    train_step,
)
from fwpo.envs import PointMassEnv
from fwpo.geometry import Box, InfeasibleError, Intersection, L2Ball, WeightedL1, Hyperplanes

from oracles import central_difference


def make_agent(cset, state_dim=3, seed=0, constraint_of=None, **kw):
    kw.setdefault("hidden", (8,))
    kw.setdefault("actor_output", "identity")
    cfg = AgentConfig(**kw)
    return Agent(cfg, state_dim, cset.dim, constraint_of or (lambda s: cset),
                 np.random.default_rng(seed), np.random.default_rng(seed + 1))


def constant_actor(agent, value):
    """Zero the last layer so the actor outputs ``value`` everywhere."""
    agent.nets.actor.weights[-1][:] = 0.0
    agent.nets.actor.biases[-1][:] = value


def linear_critic(agent, action_weights):
    """Critic ``Q(s, a) = <w, a>`` built as a single linear layer."""
    n = agent.state_dim + agent.action_dim
    W = np.zeros((n, 1))
    W[agent.state_dim:, 0] = action_weights
    agent.nets.critic = nn.DenseNet((n, 1), [W], [np.zeros(1)])
    agent.nets.critic_target = agent.nets.critic.copy()
    agent.nets.critic_opt = nn.AdamState.for_net(agent.nets.critic)


def random_batch(rng, B, state_dim, action_dim, done=None):
    return Batch(rng.standard_normal((B, state_dim)), rng.uniform(-1, 1, (B, action_dim)),
                 rng.standard_normal(B), rng.standard_normal((B, state_dim)),
                 np.zeros(B) if done is None else np.asarray(done, float))


# -- acting ----------------------------------------------------------------------


def test_act_feasible_output_passes_through():
    agent = make_agent(Box([0, 0], [1, 1]), noise_sigma=0.0)
    constant_actor(agent, [0.4, 0.7])
    executed, pre, violated = act(agent, np.zeros(3), True, np.random.default_rng(0))
    assert np.allclose(executed, [0.4, 0.7]) and np.allclose(pre, executed) and not violated


def test_act_projects_and_counts_violation():
    agent = make_agent(Box([0.0], [1.0]), noise_sigma=0.0)
    constant_actor(agent, [-0.3])
    executed, pre, violated = act(agent, np.zeros(3), False, None)
    assert executed[0] == 0.0 and pre[0] == pytest.approx(-0.3) and violated


def test_act_noise_applied_before_projection():
    agent = make_agent(Box([-1, -1], [1, 1]), noise_sigma=0.5)
    constant_actor(agent, [0.0, 0.0])
    executed, pre, _ = act(agent, np.zeros(3), True, np.random.default_rng(3))
    assert np.allclose(pre, 0.5 * np.random.default_rng(3).standard_normal(2))
    assert np.allclose(executed, np.clip(pre, -1, 1))


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(algo="sac")
    with pytest.raises(ValueError):
        AgentConfig(fw_lr=0.0)
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)


# -- critic ----------------------------------------------------------------------


def _td_loss(agent, batch, flat):
    """Mean squared TD error as a function of the critic parameters (target fixed)."""
    critic = agent.nets.critic.copy()
    k = 0
    for p in critic.params():
        p[...] = flat[k:k + p.size].reshape(p.shape)
        k += p.size
    a2 = agent.target_policy(batch.s2)
    q_next = nn.forward(agent.nets.critic_target, np.hstack([batch.s2, a2]))[:, 0]
    y = batch.r + agent.config.gamma * (1 - batch.done) * q_next
    q = nn.forward(critic, np.hstack([batch.s, batch.a]))[:, 0]
    return np.mean((q - y) ** 2)


def test_critic_update_follows_td_gradient():
    rng = np.random.default_rng(4)
    agent = make_agent(Box([-1, -1], [1, 1]), critic_lr=1e-3)
    agent.nets.critic = nn.init_net((5, 8, 1), rng, final_scale=1.0)
    agent.nets.critic_target = nn.init_net((5, 8, 1), rng, final_scale=1.0)
    agent.nets.critic_opt = nn.AdamState.for_net(agent.nets.critic)
    batch = random_batch(rng, 6, 3, 2)
    before = agent.nets.critic.flat()
    fd = central_difference(lambda p: _td_loss(agent, batch, p), before, h=1e-6)
    loss = critic_update(agent, batch)
    assert loss == pytest.approx(_td_loss(agent, batch, before), rel=1e-12)
    step = agent.nets.critic.flat() - before
    # first Adam step moves each parameter by lr against the sign of its gradient
    big = np.abs(fd) > 1e-6
    assert np.all(np.sign(step[big]) == -np.sign(fd[big]))
    assert np.allclose(np.abs(step[big]), 1e-3, rtol=1e-2)


def test_critic_done_drops_bootstrap():
    rng = np.random.default_rng(5)
    agent = make_agent(Box([-1, -1], [1, 1]), gamma=0.9)
    agent.nets.critic_target.biases[-1][:] = 100.0
    batch = random_batch(rng, 4, 3, 2, done=[1, 1, 1, 1])
    q = nn.forward(agent.nets.critic, np.hstack([batch.s, batch.a]))[:, 0]
    assert critic_update(agent, batch) == pytest.approx(np.mean((q - batch.r) ** 2))


# -- NFWPO -----------------------------------------------------------------------


def test_reference_action_hand_example():
    agent = make_agent(Box([0.0], [1.0]), fw_lr=0.05)
    constant_actor(agent, [0.5])
    linear_critic(agent, [1.0])
    ref = reference_actions(agent, np.zeros((2, 3)))
    assert np.allclose(ref, 0.525)


def test_reference_action_starts_from_projection():
    agent = make_agent(Box([0.0], [1.0]), fw_lr=0.05)
    constant_actor(agent, [1.5])
    linear_critic(agent, [-1.0])
    # x = 1 after projection, c = 0, so 1 + 0.05 * (0 - 1)
    assert np.allclose(reference_actions(agent, np.zeros((1, 3))), 0.95)


@pytest.mark.parametrize("alpha", [1e-6, 1e-3, 0.2])
def test_reference_action_small_alpha_stays_near_projection(alpha):
    cset = Intersection([Box([-1, -1], [1, 1]), L2Ball([0, 0], 1.2)], anchor=[0, 0])
    rng = np.random.default_rng(6)
    agent = make_agent(cset, fw_lr=alpha)
    agent.nets.actor = nn.init_net((3, 8, 2), rng, output="identity", final_scale=3.0)
    agent.nets.critic = nn.init_net((5, 8, 1), rng, final_scale=1.0)
    s = rng.standard_normal((5, 3))
    x = np.array([cset.project(z) for z in agent.policy(s)])
    ref = reference_actions(agent, s)
    assert np.all(np.linalg.norm(ref - x, axis=1) <= alpha * 2 * np.sqrt(2) * 1.2 + 1e-12)
    assert all(cset.contains(r) for r in ref)


def test_reference_actions_batched_matches_per_state():
    cset = Intersection([Box([-1, -1], [1, 1]), L2Ball([0, 0], 1.2)], anchor=[0, 0])
    rng = np.random.default_rng(7)
    agent = make_agent(cset)
    agent.nets.actor = nn.init_net((3, 8, 2), rng, output="identity", final_scale=3.0)
    agent.nets.critic = nn.init_net((5, 8, 1), rng, final_scale=1.0)
    s = rng.standard_normal((16, 3))
    copies = {}
    per_state = reference_actions(agent, s, constraint_of=lambda st: copies.setdefault(
        st.tobytes(), Intersection([Box([-1, -1], [1, 1]), L2Ball([0, 0], 1.2)], anchor=[0, 0])))
    assert np.allclose(reference_actions(agent, s), per_state, atol=1e-9)


class _BrokenBox(Box):
    def project(self, z, *args, **kw):
        raise InfeasibleError("broken")


def test_batch_geometry_error_reports_index():
    good = Box([0.0], [1.0])
    agent = make_agent(good)
    s = np.arange(9.0).reshape(3, 3)
    broken = _BrokenBox([0.0], [1.0])
    with pytest.raises(BatchGeometryError) as info:
        reference_actions(agent, s, constraint_of=lambda st: broken if st[0] == 3.0 else Box([0.0], [1.0]))
    assert info.value.index == 1


def test_nfwpo_update_moves_actor_toward_reference():
    rng = np.random.default_rng(8)
    agent = make_agent(Box([0.0], [1.0]), fw_lr=0.5, actor_lr=1e-2)
    constant_actor(agent, [0.2])
    linear_critic(agent, [1.0])
    batch = random_batch(rng, 4, 3, 1)
    before = agent.policy(batch.s)
    loss = nfwpo_actor_update(agent, batch)
    assert loss == pytest.approx(4 * 0.4 ** 2)
    assert np.all(agent.policy(batch.s) > before)


# -- the unconstrained-regression / DPG equivalence ----------------------------------


def test_regression_step_equals_dpg_step():
    rng = np.random.default_rng(9)
    agent = make_agent(Box([-1, -1], [1, 1]), hidden=(16, 16), actor_output="tanh", action_scale=2.0)
    agent.nets.actor = nn.init_net((3, 16, 16, 2), rng, output="tanh", final_scale=1.0)
    agent.nets.critic = nn.init_net((5, 16, 16, 1), rng, final_scale=1.0)
    s = rng.standard_normal((32, 3))
    eta1, eta2 = 0.3, 0.07
    B = len(s)

    pi = agent.policy(s)
    target = pi + eta1 * nn.input_grad(agent.nets.critic, np.hstack([s, pi]))[:, 3:]
    grads, _ = regression_gradient(agent, s, target, weight=1.0 / (2 * B))
    reg = nn.sgd_step(agent.nets.actor.copy(), grads, eta2)

    dpg = nn.sgd_step(agent.nets.actor.copy(), dpg_gradient(agent, s).scaled(-1.0), eta1 * eta2)
    assert np.max(np.abs(reg.flat() - dpg.flat())) <= 1e-10
    assert np.max(np.abs(reg.flat() - agent.nets.actor.flat())) > 1e-4


def test_dpg_gradient_matches_finite_difference():
    rng = np.random.default_rng(10)
    agent = make_agent(Box([-1, -1], [1, 1]))
    agent.nets.actor = nn.init_net((3, 8, 2), rng, output="identity", final_scale=1.0)
    agent.nets.critic = nn.init_net((5, 8, 1), rng, hidden="tanh", final_scale=1.0)
    s = rng.standard_normal((5, 3))

    def mean_q(flat):
        actor = agent.nets.actor.copy()
        k = 0
        for p in actor.params():
            p[...] = flat[k:k + p.size].reshape(p.shape)
            k += p.size
        return nn.forward(agent.nets.critic, np.hstack([s, nn.forward(actor, s)])).mean()

    fd = central_difference(mean_q, agent.nets.actor.flat(), h=1e-6)
    assert np.allclose(dpg_gradient(agent, s).flat(), fd, atol=1e-7)


def test_ddpg_zero_gradient_leaves_actor_unchanged():
    rng = np.random.default_rng(11)
    agent = make_agent(Box([-1, -1], [1, 1]), algo="ddpg_projection")
    linear_critic(agent, [0.0, 0.0])
    before = agent.nets.actor.flat()
    ddpg_actor_update(agent, random_batch(rng, 8, 3, 2))
    assert np.array_equal(agent.nets.actor.flat(), before)


# -- shaping ---------------------------------------------------------------------


def test_shape_reward_examples():
    assert shape_reward(1.0, [0.3, 0.4], [0.0, 0.0], 2.0) == pytest.approx(0.0)
    assert shape_reward(-1.0, [0.5], [0.5], 4.0) == -1.0
    with pytest.raises(ValueError):
        shape_reward(0.0, [1.0], [0.0], -1.0)


# -- replay ----------------------------------------------------------------------


def test_replay_uniform_chi_square():
    buf = ReplayBuffer(100, 1, 1, np.random.default_rng(12))
    for i in range(100):
        buf.add(Transition(np.array([i]), np.zeros(1), 0.0, np.zeros(1), False))
    draws = np.concatenate([buf.sample_indices(100) for _ in range(1000)])
    counts = np.bincount(draws, minlength=100)
    stat = np.sum((counts - 1000.0) ** 2 / 1000.0)
    assert stat < stats.chi2.ppf(0.999, df=99)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.add(Transition(np.array([i]), np.zeros(1), float(i), np.zeros(1), i == 4))
    assert len(buf) == 3
    assert sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        buf.sample(4)


# -- warmup sampler --------------------------------------------------------------


def test_sample_feasible_sets():
    rng = np.random.default_rng(13)
    sets = [
        Intersection([Box([-1, -1], [1, 1]), L2Ball([0, 0], 0.5)], anchor=[0, 0]),
        Intersection([Box([0, 0, 0], [35, 35, 35]), Hyperplanes([[1, 1, 1]], [90])], anchor=[30, 30, 30]),
        Intersection([Box([-1, -1], [1, 1]), WeightedL1([1, 2], 0.5)], anchor=[0, 0]),
    ]
    for cset in sets:
        for _ in range(50):
            assert cset.contains(sample_feasible(cset, rng))


# -- full interaction steps ------------------------------------------------------


@pytest.mark.parametrize("algo", ["nfwpo", "ddpg_projection", "ddpg_shaping"])
def test_train_step_warmup_then_learning(algo):
    env = PointMassEnv()
    env.reset(0)
    cset = env.constraint_of(env.state)
    agent = Agent(AgentConfig(algo=algo, warmup_steps=20, batch_size=8, hidden=(8,),
                              noise_sigma=0.3, shaping_weight=1.0),
                  env.state_dim, env.action_dim, env.constraint_of,
                  np.random.default_rng(0), np.random.default_rng(1))
    actor0, critic0 = agent.nets.actor.flat(), agent.nets.critic.flat()
    rng = np.random.default_rng(2)
    for k in range(20):
        t = train_step(agent, env, k, rng)
        assert cset.contains(t.a, 1e-6) and not t.pre_violation
    assert np.array_equal(agent.nets.actor.flat(), actor0)
    assert np.array_equal(agent.nets.critic.flat(), critic0)
    assert agent.pre_violations == 0
    for k in range(20, 60):
        t = train_step(agent, env, k, rng)
        assert cset.contains(t.a, 1e-6)
    assert agent.train_steps == 40 and agent.actor_updates == 40
    assert not np.array_equal(agent.nets.actor.flat(), actor0)
    assert agent.pre_violations > 0


def test_train_step_respects_actor_period():
    env = PointMassEnv()
    env.reset(0)
    agent = Agent(AgentConfig(warmup_steps=10, batch_size=4, hidden=(8,), actor_update_period=50),
                  env.state_dim, env.action_dim, env.constraint_of,
                  np.random.default_rng(0), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for k in range(160):
        train_step(agent, env, k, rng)
    # actor steps at global steps 50, 100, 150
    assert agent.actor_updates == 3 and agent.train_steps == 150


def test_train_step_stores_true_terminal_not_time_limit():
    env = PointMassEnv(episode_length=3, random_goal=False)
    env.reset(0)
    agent = Agent(AgentConfig(warmup_steps=100, hidden=(8,)), env.state_dim, env.action_dim,
                  env.constraint_of, np.random.default_rng(0), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for k in range(6):
        train_step(agent, env, k, rng)
    assert not agent.buffer.done[:6].any()
