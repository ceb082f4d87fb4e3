import math

import numpy as np
import pytest
from scipy import integrate

from admpo import autodiff as ad
from admpo.exceptions import ConfigurationError, UsageError
from admpo.sac import SACAgent, _all_params, squashed_log_prob, squashed_sample


def agent(**kw):
    base = dict(state_dim=2, action_dim=1, hidden=(16, 16), batch_size=32, random_state=0)
    base.update(kw)
    return SACAgent(**base)


def batch(n=32, seed=0, sd=2):
    rng = np.random.default_rng(seed)
    return {"s": rng.normal(size=(n, sd)), "a": rng.uniform(-1, 1, (n, 1)), "r": rng.normal(size=n),
            "s_next": rng.normal(size=(n, sd)), "terminal": np.zeros(n, bool)}


def test_terminal_target_is_reward():
    ag = agent()
    y = ag.critic_target(np.array([1.5, -2.0]), np.zeros((2, 2)), np.array([True, True]))
    np.testing.assert_array_equal(y[:, 0], [1.5, -2.0])


def test_gamma_zero_target_is_reward():
    ag = agent(gamma=0.0)
    y = ag.critic_target(np.array([0.3]), np.ones((1, 2)), np.array([False]))
    assert y[0, 0] == 0.3


def test_gamma_zero_critic_regresses_to_reward():
    ag = agent(gamma=0.0, state_dim=1, lr_critic=3e-3)
    rng = np.random.default_rng(1)
    for _ in range(1500):
        s = rng.uniform(-1, 1, (32, 1))
        a = rng.uniform(-1, 1, (32, 1))
        ag.update({"s": s, "a": a, "r": (s[:, 0] + a[:, 0]), "s_next": s, "terminal": np.zeros(32, bool)})
    s = np.array([[0.5], [-0.2]])
    a = np.array([[0.1], [0.4]])
    with ad.no_grad():
        q = ag.critics[0](ag._tensor(s), ag._tensor(a)).data[:, 0]
    np.testing.assert_allclose(q, [0.6, 0.2], atol=0.05)


@pytest.mark.parametrize("mean,log_std", [(0.0, 0.0), (0.7, -0.5), (-1.5, 0.4)])
def test_squashed_density_integrates_to_one(mean, log_std):
    f = lambda a: math.exp(squashed_log_prob(np.array([[a]]), np.array([[mean]]), np.array([[log_std]]))[0])  # noqa: E731
    total, _ = integrate.quad(f, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sample_log_prob_matches_closed_form():
    with ad.precision(np.float64):
        rng = np.random.default_rng(0)
        mean, log_std = rng.normal(size=(50, 2)), rng.normal(scale=0.3, size=(50, 2))
        eps = rng.standard_normal((50, 2))
        a, lp = squashed_sample(ad.Tensor(mean), ad.Tensor(log_std), eps)
    np.testing.assert_allclose(lp.data[:, 0], squashed_log_prob(a.data, mean, log_std), rtol=1e-8, atol=1e-8)


def test_actions_bounded():
    ag = agent()
    s = np.array([[1e3, -1e3], [0.0, 0.0]])
    for mode in ("sample", "mean"):
        a = ag.act(s, mode=mode, rng=np.random.default_rng(0))
        assert np.all(np.abs(a) <= 1.0)
    with pytest.raises(UsageError):
        ag.act(s, mode="greedy")


def test_targets_move_only_by_polyak():
    ag = agent(tau=0.1)
    before = [p.data.copy() for _, p in _all_params(ag.targets[0])]
    ag.update(batch())
    online = [p.data for _, p in _all_params(ag.critics[0])]
    after = [p.data for _, p in _all_params(ag.targets[0])]
    for b, o, t in zip(before, online, after):
        np.testing.assert_allclose(t, 0.9 * b + 0.1 * o, rtol=1e-5, atol=1e-6)


def test_polyak_contracts_distance():
    ag = agent(tau=0.05)
    for _, p in _all_params(ag.critics[1]):
        p.data = p.data + 1.0
    def dist():
        return math.sqrt(sum(float(np.sum((p.data - t.data) ** 2))
                             for (_, p), (_, t) in zip(_all_params(ag.critics[1]), _all_params(ag.targets[1]))))
    d0 = dist()
    ag.soft_update()
    assert dist() == pytest.approx(0.95 * d0, rel=1e-5)


def test_temperature_tracks_entropy_target():
    ag = agent(target_entropy=-1.0)
    assert ag.entropy_target == -1.0
    assert agent().entropy_target == -1.0
    assert agent(action_dim=2).entropy_target == -2.0


@pytest.mark.parametrize("kw", [{"tau": 0.0}, {"tau": 1.5}, {"gamma": 1.0}, {"real_fraction": 0.0}])
def test_invalid_settings(kw):
    with pytest.raises(ConfigurationError):
        agent(**kw)


def test_save_load_round_trip(tmp_path):
    ag = agent()
    ag.update(batch())
    path = tmp_path / "a.admp"
    ag.save(path)
    back = SACAgent.load(path)
    s = np.ones((3, 2))
    np.testing.assert_array_equal(back.act(s, mode="mean"), ag.act(s, mode="mean"))
    assert back.alpha == pytest.approx(ag.alpha)


def test_updates_deterministic():
    def run():
        ag = agent()
        for i in range(5):
            ag.update(batch(seed=i))
        return ag.state()

    a, b = run(), run()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_two_state_chain_value_fixed_point():
    # state 0 -> state 1 with reward 1, state 1 -> terminal with reward 2; actions do not matter
    gamma, alpha = 0.9, 0.1
    ag = SACAgent(state_dim=1, action_dim=1, hidden=(32, 32), gamma=gamma, lr_alpha=0.0, init_alpha=alpha,
                  lr_critic=1e-3, batch_size=64, random_state=3)
    rng = np.random.default_rng(4)
    for _ in range(20_000):
        first = rng.random(64) < 0.5
        s = np.where(first, 0.0, 1.0)[:, None]
        ag.update({"s": s, "a": rng.uniform(-1, 1, (64, 1)), "r": np.where(first, 1.0, 2.0),
                   "s_next": np.where(first, 1.0, 1.0)[:, None], "terminal": ~first})
    probe = np.random.default_rng(5)
    with ad.no_grad():
        mean, log_std = ag.actor(ag._tensor(np.ones((100_000, 1))))
        a_next, logp = squashed_sample(mean, log_std, probe.standard_normal(mean.shape))
    expect0 = 1.0 + gamma * (2.0 - alpha * float(np.mean(logp.data)))
    acts = np.linspace(-0.9, 0.9, 7)[:, None]
    with ad.no_grad():
        q0 = ag.critics[0](ag._tensor(np.zeros((7, 1))), ag._tensor(acts)).data[:, 0]
        q1 = ag.critics[0](ag._tensor(np.ones((7, 1))), ag._tensor(acts)).data[:, 0]
    np.testing.assert_allclose(q1, 2.0, atol=1e-2)
    np.testing.assert_allclose(q0, expect0, atol=1e-2)
