import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm

from deadend.geometry import Pose2D
from deadend.kinematics import VehicleSpec
from deadend.sac.agent import Batch, SACAgent, SACConfig, dumps_checkpoint, loads_checkpoint
from deadend.sac.buffer import ReplayBuffer, dumps_buffer, loads_buffer
from deadend.sac.nn import MLP, Adam
from deadend.sac.train import (LARGEST_VEHICLE, SMALLEST_VEHICLE, TrainConfig, budget_goal, curriculum_vehicle,
                               read_train_log, train, write_train_log)
from deadend.scenario import ControlPhase, Goal, Scenario, SeedTrajectory
from oracles import central_difference

TOY = SACConfig(obs_dim=3, act_dim=2, hidden=(4,))


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


def toy_batch(rng, B=6, obs=3, act=2):
    return Batch(rng.normal(size=(B, obs)), np.tanh(rng.normal(size=(B, act))), rng.normal(size=B),
                 rng.normal(size=(B, obs)), (rng.random(B) < 0.3).astype(float))


# -- networks and optimizer -------------------------------------------------

def test_mlp_input_and_parameter_gradients():
    rng = np.random.default_rng(0)
    net = MLP((3, 5, 4, 2), rng)
    x = rng.normal(size=(7, 3))
    w = rng.normal(size=(7, 2))
    out, cache = net.forward(x)
    gp, gx = net.backward(cache, w)

    def f_params(flat):
        n = net.copy()
        n.set_flat(flat)
        return float(np.sum(w * n(x)))

    assert rel_err(gp, central_difference(f_params, net.get_flat())) < 1e-4
    fd_x = central_difference(lambda v: float(np.sum(w * net(v.reshape(7, 3)))), x.ravel()).reshape(7, 3)
    assert rel_err(gx, fd_x) < 1e-4


def test_adam_first_step_is_lr_times_sign():
    p = np.array([1.0, -2.0, 0.5])
    opt = Adam(lr=0.01)
    opt.step(p, np.array([3.0, -0.2, 0.0]))
    # bias-corrected m / sqrt(v) equals sign(g) on the first step (zero gradient stays put)
    assert p == pytest.approx([0.99, -1.99, 0.5], abs=1e-8)
    d = opt.state_dict()
    again = Adam.from_state_dict(d)
    assert again.state_dict() == d


def test_soft_update_convex_combination():
    rng = np.random.default_rng(1)
    a, b = MLP((3, 4, 1), rng), MLP((3, 4, 1), rng)
    old = b.get_flat()
    b.soft_update_from(a, 0.3)
    assert np.allclose(b.get_flat(), 0.3 * a.get_flat() + 0.7 * old, rtol=0, atol=1e-15)


# -- policy -----------------------------------------------------------------

def linear_agent(mu, log_std, obs_dim=2, act_dim=2, **kw):
    """Agent whose actor ignores the state: mean ``mu`` and log-std ``log_std``."""
    ag = SACAgent(SACConfig(obs_dim=obs_dim, act_dim=act_dim, hidden=(), **kw), seed=0)
    W, b = ag.actor.params
    W[...] = 0.0
    b[...] = np.concatenate([mu, log_std])
    return ag


def test_deterministic_zero_mean_gives_zero_action():
    ag = linear_agent([0.0, 0.0], [0.3, -1.0])
    a, _ = ag.sample_action(np.ones(2), deterministic=True)
    assert np.all(a == 0.0)


def test_actions_bounded_and_log_density_matches_change_of_variables():
    ag = linear_agent([0.8, -1.5], [0.2, -0.7])
    mu, sd = np.array([0.8, -1.5]), np.exp([0.2, -0.7])
    for _ in range(200):
        a, logp = ag.sample_action(np.zeros(2))
        assert np.all(np.abs(a) < 1)
        u = np.arctanh(a)
        oracle = np.sum(norm.logpdf(u, mu, sd) - np.log1p(-a * a))
        assert logp == pytest.approx(oracle, abs=1e-6)


def test_monte_carlo_mean_matches_pushforward():
    mu, ls = np.array([0.4, -0.9]), np.array([-0.3, 0.1])
    ag = linear_agent(mu, ls)
    n = 100_000
    xi = ag.rng.standard_normal((n, 2))
    a, _, _ = ag.policy(np.zeros((n, 2)), xi)
    nodes, weights = hermegauss(80)
    weights = weights / weights.sum()
    for k in range(2):
        exact = float(np.sum(weights * np.tanh(mu[k] + np.exp(ls[k]) * nodes)))
        se = a[:, k].std() / math.sqrt(n)
        assert abs(a[:, k].mean() - exact) < 3 * se


def test_entropy_grows_with_temperature_on_bandit():
    # three reward bumps on the squashed action axis; the best squashed-Gaussian
    # policy is found by grid search over (mu, log_std)
    def reward(a):
        return (np.exp(-((a + 0.6) / 0.1) ** 2) + 0.8 * np.exp(-((a - 0.1) / 0.1) ** 2)
                + 0.9 * np.exp(-((a - 0.7) / 0.1) ** 2))

    nodes, weights = hermegauss(60)
    weights = weights / weights.sum()
    grid = [(m, s) for m in np.linspace(-1.5, 1.5, 31) for s in np.linspace(-3, 1, 21)]
    stats = []
    for m, s in grid:
        ag = linear_agent([m], [s], obs_dim=1, act_dim=1)
        a, logp, _ = ag.policy(np.zeros((len(nodes), 1)), nodes[:, None])
        stats.append((float(np.sum(weights * reward(a[:, 0]))), float(-np.sum(weights * logp))))
    stats = np.array(stats)
    entropies = []
    for alpha in [0.0, 0.01, 0.03, 0.1, 0.3, 1.0]:
        best = np.argmax(stats[:, 0] + alpha * stats[:, 1])
        entropies.append(stats[best, 1])
    assert all(b >= a - 1e-12 for a, b in zip(entropies, entropies[1:]))
    assert entropies[-1] > entropies[0]


# -- losses and targets -----------------------------------------------------

def test_critic_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    ag = SACAgent(TOY, seed=3)
    batch = toy_batch(rng)
    y = rng.normal(size=6)
    _, g = ag.critic_loss(ag.q1, batch, y)

    def f(flat):
        net = ag.q1.copy()
        net.set_flat(flat)
        return ag.critic_loss(net, batch, y)[0]

    assert rel_err(g, central_difference(f, ag.q1.get_flat())) < 1e-4


def test_actor_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    ag = SACAgent(TOY, seed=5)
    ag.log_alpha[0] = math.log(0.3)
    batch = toy_batch(rng)
    xi = rng.standard_normal((6, 2))
    _, g, _ = ag.actor_loss(batch, xi)
    base = ag.actor.get_flat()

    def f(flat):
        ag.actor.set_flat(flat)
        loss = ag.actor_loss(batch, xi)[0]
        ag.actor.set_flat(base)
        return loss

    assert rel_err(g, central_difference(f, base)) < 1e-4


def test_temperature_gradient_matches_finite_differences():
    ag = SACAgent(TOY, seed=6)
    logp = np.array([0.3, -1.2, 2.5, -0.4])
    _, g = ag.alpha_loss(logp)

    def f(v):
        ag.log_alpha[0] = v[0]
        return ag.alpha_loss(logp)[0]

    assert rel_err(g, central_difference(f, [0.7])) < 1e-4


def two_state_chain(gamma=0.9, alpha=0.2):
    """States s0 -> s1 -> terminal, one-hot encoded; critics are linear in the state."""
    ag = linear_agent([0.3, -0.2], [-0.5, -1.0], obs_dim=2, act_dim=2, gamma=gamma, init_alpha=alpha)
    r0, r1 = 1.5, -0.7
    for net in (ag.q1_targ, ag.q2_targ):
        W, b = net.params
        W[...] = 0.0
        b[...] = 0.0
    # the first target holds the true value of s1 (its successor is terminal);
    # the second overestimates it, so the twin minimum must pick the first
    ag.q1_targ.params[0][:2, 0] = [9.0, r1]
    ag.q2_targ.params[0][:2, 0] = [12.0, r1 + 0.4]
    s0, s1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    batch = Batch(np.stack([s0, s1]), np.zeros((2, 2)), np.array([r0, r1]), np.stack([s1, s0]), np.array([0.0, 1.0]))
    return ag, batch, (r0, r1, gamma, alpha)


def test_soft_bellman_target_two_state_chain():
    ag, batch, (r0, r1, gamma, alpha) = two_state_chain()
    xi = np.array([[0.4, -1.1], [0.0, 0.0]])
    y = ag.critic_targets(batch, xi)
    # hand evaluation: a' = tanh(mu + sigma xi) at s1, log pi by change of variables
    mu, ls = [0.3, -0.2], [-0.5, -1.0]
    logp = 0.0
    for k in range(2):
        u = mu[k] + math.exp(ls[k]) * xi[0, k]
        logp += -0.5 * xi[0, k] ** 2 - ls[k] - 0.5 * math.log(2 * math.pi) - math.log(1 - math.tanh(u) ** 2)
    v_s1 = min(r1, r1 + 0.4) - alpha * logp
    assert y[0] == pytest.approx(r0 + gamma * v_s1, abs=1e-6)
    # terminal transition: no bootstrap
    assert y[1] == r1


def test_target_without_discount_is_reward():
    ag = SACAgent(TOY, seed=7)
    ag2 = SACAgent(SACConfig(obs_dim=3, act_dim=2, hidden=(4,), gamma=0.0), seed=7)
    batch = toy_batch(np.random.default_rng(8))
    xi = np.zeros((6, 2))
    assert np.array_equal(ag2.critic_targets(batch, xi), batch.r)
    done = batch._replace(d=np.ones(6))
    assert np.array_equal(ag.critic_targets(done, xi), batch.r)


def test_critic_fixed_point_has_zero_loss():
    ag = SACAgent(TOY, seed=9)
    batch = toy_batch(np.random.default_rng(10))
    y = ag._q(ag.q1, batch.s, batch.a)[0]
    loss, g = ag.critic_loss(ag.q1, batch, y)
    assert loss == 0.0 and np.all(g == 0.0)


def test_hard_copy_with_unit_tau():
    ag = SACAgent(SACConfig(obs_dim=3, act_dim=2, hidden=(4,), tau=1.0), seed=11)
    ag.update(toy_batch(np.random.default_rng(12)))
    assert np.array_equal(ag.q1_targ.get_flat(), ag.q1.get_flat())
    assert np.array_equal(ag.q2_targ.get_flat(), ag.q2.get_flat())


def test_critic_regression_converges_with_adam():
    ag = SACAgent(SACConfig(obs_dim=3, act_dim=2, hidden=(16,)), seed=13)
    batch = toy_batch(np.random.default_rng(14), B=32)
    y = np.sin(batch.s[:, 0]) + batch.a[:, 1]
    opt = Adam(lr=1e-2)
    first = ag.critic_loss(ag.q1, batch, y)[0]
    for _ in range(300):
        loss, g = ag.critic_loss(ag.q1, batch, y)
        opt.step(ag.q1.flat, g)
    assert loss < 0.1 * first


# -- replay buffer ----------------------------------------------------------

def random_transitions(rng, n, obs=45, act=2):
    for _ in range(n):
        yield rng.normal(size=obs), rng.uniform(-1, 1, act), float(rng.normal()), rng.normal(size=obs), bool(rng.random() < 0.1)


def test_buffer_ring_overwrites_oldest():
    buf = ReplayBuffer(1, 1, capacity=3)
    for k in range(5):
        buf.add([k], [0], float(k), [k + 1], False)
    assert buf.size == 3
    assert [t[2] for t in buf.transitions()] == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        buf.add([0], [0], float("nan"), [0], False)
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))


def test_buffer_uniform_sampling():
    buf = ReplayBuffer(1, 1, capacity=100)
    for k in range(100):
        buf.add([k], [0], float(k), [k], False)
    rng = np.random.default_rng(15)
    counts = np.zeros(100)
    for _ in range(2500):
        b = buf.sample(40, rng)
        np.add.at(counts, b.r.astype(int), 1)
    n, p = 100_000, 0.01
    assert np.all(np.abs(counts - n * p) <= 5 * math.sqrt(n * p * (1 - p)))


def test_buffer_round_trips(tmp_path):
    empty = ReplayBuffer()
    assert loads_buffer(dumps_buffer(empty)).size == 0
    assert dumps_buffer(loads_buffer(dumps_buffer(empty))) == dumps_buffer(empty)

    rng = np.random.default_rng(16)
    buf = ReplayBuffer(capacity=5000)
    items = list(random_transitions(rng, 1000))
    for t in items:
        buf.add(*t)
    text = dumps_buffer(buf)
    back = loads_buffer(text)
    assert back.size == 1000 and back.capacity == 5000
    for (s, a, r, s2, d), (S, A, R, S2, D) in zip(items, back.transitions()):
        assert np.array_equal(s, S) and np.array_equal(a, A) and r == R and np.array_equal(s2, S2) and d == D
    assert dumps_buffer(back) == text


def test_buffer_rejects_malformed():
    buf = ReplayBuffer(2, 1)
    buf.add([0, 1], [0], 1.0, [1, 2], True)
    text = dumps_buffer(buf)
    with pytest.raises(ValueError):
        loads_buffer(text.replace('"schema_version": 1', '"schema_version": 9'))
    with pytest.raises(ValueError):
        loads_buffer(text.splitlines()[0] + "\n")
    with pytest.raises(ValueError):
        loads_buffer("")
    with pytest.raises(ValueError):
        loads_buffer(text.replace("[0.0,1.0]", "[0.0,1.0,2.0]", 1))


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_round_trip_is_exact():
    ag = SACAgent(TOY, seed=17)
    for _ in range(3):
        ag.update(toy_batch(np.random.default_rng(18)))
    text = dumps_checkpoint(ag, {"note": "x"})
    back, extra = loads_checkpoint(text)
    assert extra == {"note": "x"}
    assert dumps_checkpoint(back, extra) == text
    s = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(back.act(s, True), ag.act(s, True))
    # the stored RNG state continues the same stream
    assert np.array_equal(back.act(s), ag.act(s))
    with pytest.raises(ValueError):
        loads_checkpoint(text.replace('"schema_version":1', '"schema_version":3'))


# -- training loop ----------------------------------------------------------

def corridor():
    seed = SeedTrajectory((Pose2D(0, 0, 0), Pose2D(0.5, 0, 0)), (ControlPhase(1, 0, 0.5),), "forward", "corridor")
    return Scenario("corridor", VehicleSpec(), Pose2D(0, 0, 0), Goal((1.0, 0.0)), (), seed, "walls")


def small_agent(seed=0):
    return SACAgent(SACConfig(hidden=(8,)), seed=seed)


def test_update_schedule():
    cfg = TrainConfig(episodes=4, max_steps=30, updates_per_round=500, curriculum=False)
    res = train([corridor()], cfg, agent=small_agent())
    assert res.state.update_rounds == 2
    assert res.agent.n_updates == 1000
    assert [l.episode for l in res.logs] == [1, 2, 3, 4]


def test_warm_start_runs_exactly_the_pretraining_updates():
    demo = ReplayBuffer()
    for t in random_transitions(np.random.default_rng(19), 60):
        demo.add(*t)
    res = train([corridor()], TrainConfig(episodes=0), agent=small_agent(), pretrain_buffer=demo)
    assert res.agent.n_updates == 100 and res.state.pretrain_updates == 100
    assert res.buffer.size == 60


def test_budget_grows_on_goal_and_is_capped():
    cfg = TrainConfig(episodes=3, max_steps=30, update_every=100, curriculum=False, budget_start=7.2)
    res = train([corridor()], cfg, agent=small_agent(), on_episode=None)
    goals = [l.goal for l in res.logs]
    expected = 7.2
    for log, g in zip(res.logs, goals):
        assert log.budget == pytest.approx(expected)
        if g:
            expected = min(8.0, expected + 0.5)
    assert res.state.budget == pytest.approx(expected)


def test_budget_goal_interpolates_reference_path():
    sc = corridor()
    # reference path: (0,0) -> (0.5,0) -> goal (1,0)
    assert budget_goal(sc, 0.25) == pytest.approx([0.25, 0.0])
    assert budget_goal(sc, 0.8) == pytest.approx([0.8, 0.0])
    assert budget_goal(sc, 5.0) == pytest.approx([1.0, 0.0])


def test_curriculum_vehicle_stages():
    base = VehicleSpec()
    first = curriculum_vehicle(base, 0, 5)
    last = curriculum_vehicle(base, 4, 5)
    assert (first.length, first.width, first.wheelbase) == LARGEST_VEHICLE
    assert (last.length, last.width, last.wheelbase) == pytest.approx(SMALLEST_VEHICLE)
    mid = curriculum_vehicle(base, 2, 5)
    assert mid.length == pytest.approx(0.42) and mid.wheelbase == pytest.approx(0.313)
    assert curriculum_vehicle(base, 9, 5) == last


def test_train_log_round_trip(tmp_path):
    cfg = TrainConfig(episodes=3, max_steps=20, update_every=100, curriculum=False)
    res = train([corridor()], cfg, agent=small_agent())
    write_train_log(res.logs, tmp_path / "a.csv")
    assert read_train_log(tmp_path / "a.csv") == res.logs
    write_train_log(read_train_log(tmp_path / "a.csv"), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    write_train_log(res.logs[:1], tmp_path / "c.csv")
    write_train_log(res.logs[1:], tmp_path / "c.csv", append=True)
    assert (tmp_path / "c.csv").read_bytes() == (tmp_path / "a.csv").read_bytes()
