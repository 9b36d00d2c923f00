import numpy as np
import pytest
from helpers import central_diff, rel_error

from cenra import approximator as ax
from cenra.approximator import NetSpec
from cenra.errors import ConfigurationError, UsageError
from cenra.policy_agent import DqnAgent, DqnConfig, augmented_reward, epsilon_at, td_loss_and_grad
from cenra.replay import Batch

OBS, ACTS = 5, 4


class ConstantReward:
    def __init__(self, c):
        self.c = c

    def knowledge_rewards(self, obs, actions, mode="mean", rng=None):
        return np.full(len(np.atleast_2d(obs)), self.c)


def random_batch(rng, n):
    return Batch(np.zeros(n, dtype=np.int64), rng.uniform(size=(n, OBS)), rng.integers(0, ACTS, n),
                 rng.uniform(size=(n, OBS)), rng.integers(0, ACTS, n), rng.integers(0, 2, n).astype(float),
                 np.zeros(n), rng.integers(0, 2, n).astype(float))


def agent(seed=0, hidden=(16, 16), **kw):
    return DqnAgent(OBS, ACTS, DqnConfig(hidden=hidden, **kw), np.random.default_rng(seed), total_steps=1000)


def test_augmented_reward_examples():
    assert augmented_reward(1.0, 0.4, 0.5) == pytest.approx(1.2)
    assert augmented_reward(0.0, -1.0, 1.0) == -1.0
    assert DqnConfig().knowledge_weight == 0.5
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigurationError):
            augmented_reward(0.0, 0.0, bad)


def test_epsilon_one_is_uniform():
    a = agent()
    a.set_epsilon(1.0)
    rng = np.random.default_rng(0)
    obs = np.zeros(OBS)
    counts = np.bincount([a.act(obs, rng)[0] for _ in range(8000)], minlength=ACTS)
    assert np.abs(counts - 2000).max() < 150


def test_greedy_breaks_ties_low():
    a = agent(hidden=(4,))
    spec = a.state.spec
    ls = ax.layout(spec)[-1]
    a.state.q[ls.w] = 0.0
    a.state.q[ls.b] = [0.1, 0.9, 0.2, 0.9]
    a.set_epsilon(0.0)
    action, feature = a.act(np.ones(OBS), np.random.default_rng(0))
    assert action == 1 and feature.shape == (4,)


def test_feature_has_hidden_width(rng):
    a = agent(hidden=(16, 12))
    for _ in range(5):
        assert a.act(rng.uniform(size=OBS), rng)[1].shape == (12,)
    assert a.feature_dim == 12


def test_act_shape_error(rng):
    with pytest.raises(UsageError):
        agent().act(np.zeros(OBS + 1), rng)


def test_epsilon_schedule():
    cfg = DqnConfig()
    eps = [epsilon_at(s, 1000, cfg) for s in range(0, 1200, 10)]
    assert eps[0] == 1.0 and eps[-1] == pytest.approx(0.05)
    assert all(a >= b for a, b in zip(eps, eps[1:]))
    assert epsilon_at(500, 1000, cfg) == pytest.approx(0.05)
    assert epsilon_at(250, 1000, cfg) == pytest.approx(0.525)


def test_zero_knowledge_reward_matches_plain_update(rng):
    batch = random_batch(rng, 32)
    a, b = agent(seed=4), agent(seed=4)
    a.update(batch, ConstantReward(0.0))
    b.update(batch, None)
    assert np.array_equal(a.state.q, b.state.q) and np.array_equal(a.state.target_q, b.state.target_q)


def test_constant_knowledge_reward_equals_shifted_env_reward():
    rng = np.random.default_rng(3)
    c, lam = 0.3, 0.5
    a, b = agent(seed=1, knowledge_weight=lam), agent(seed=1, knowledge_weight=lam)
    for _ in range(200):
        batch = random_batch(rng, 16)
        shifted = Batch(**{**batch.__dict__, "r_env": batch.r_env + lam * c})
        a.update(batch, ConstantReward(c))
        b.update(shifted, None)
    probe = rng.uniform(size=(50, OBS))
    np.testing.assert_array_equal(a.q_values(probe).argmax(1), b.q_values(probe).argmax(1))


def test_update_is_deterministic():
    states = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        a = agent(seed=2)
        for _ in range(20):
            a.update(random_batch(rng, 8), ConstantReward(0.1))
        states.append(a.state)
    assert np.array_equal(states[0].q, states[1].q)
    assert np.array_equal(states[0].target_q, states[1].target_q)


def test_td_grad_matches_finite_differences():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(100):
        hidden = tuple(int(h) for h in rng.integers(2, 6, rng.integers(1, 3)))
        spec = NetSpec(OBS, hidden, ACTS, "tanh")
        p, tp = ax.init_params(spec, rng), ax.init_params(spec, rng)
        batch = random_batch(rng, int(rng.integers(1, 6)))
        r_pol = batch.r_env + 0.5 * rng.uniform(-1, 1, len(batch))
        _, g = td_loss_and_grad(spec, p, tp, batch, r_pol, 0.99)
        fd = central_diff(lambda q: td_loss_and_grad(spec, q, tp, batch, r_pol, 0.99)[0], p)
        worst = max(worst, rel_error(g, fd))
    assert worst < 1e-4


def test_checkpoint_roundtrip(tmp_path, rng):
    a = agent()
    a.update(random_batch(rng, 8))
    a.save(tmp_path / "q.ckpt")
    b = DqnAgent.load(tmp_path / "q.ckpt")
    assert np.array_equal(a.state.q, b.state.q) and np.array_equal(a.state.target_q, b.state.target_q)
