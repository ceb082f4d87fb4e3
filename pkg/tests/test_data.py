import numpy as np
import pytest
from scipy import stats

from admpo.data import ModelBuffer, ReplayBuffer, SamplingError, mixed_batch, read_dataset, write_dataset
from admpo.datasets import BehaviorSpec, collect, gen_dataset
from admpo.envs import make_env


def filled(env_name="pendulum", episodes=5, seed=0):
    env = make_env(env_name)
    buf, _ = collect(env, BehaviorSpec.from_any("random"), episodes, np.random.default_rng(seed))
    return buf, env


def test_add_assigns_episode_ids_and_remaining():
    buf = ReplayBuffer(1, 1)
    for ep_len in (3, 2):
        for t in range(ep_len):
            buf.add([t], [0], 0.0, [t + 1], done=t == ep_len - 1)
    np.testing.assert_array_equal(buf.arrays()["episode_id"], [0, 0, 0, 1, 1])
    np.testing.assert_array_equal(buf.remaining(), [3, 2, 1, 2, 1])
    assert buf.n_episodes == 2


def test_non_finite_reward_rejected():
    with pytest.raises(ValueError):
        ReplayBuffer(1, 1).add([0], [0], float("nan"), [0], False)


def test_window_longer_than_episodes_is_an_error():
    buf, _ = filled(episodes=1)
    with pytest.raises(SamplingError, match="200"):
        buf.sample_sequences(4, 201, np.random.default_rng(0), k=201)


def test_sequences_stay_inside_one_episode_and_replay_exactly():
    buf, env = filled(episodes=4)
    batch = buf.sample_sequences(500, 5, np.random.default_rng(1))
    ep = buf.arrays()["episode_id"]
    s_index = {buf.s[i].tobytes(): i for i in range(len(buf))}
    for i in range(len(batch)):
        start = s_index[batch.s_start[i].tobytes()]
        k = batch.k[i]
        assert ep[start] == ep[start + k - 1]
        assert not buf.done[start: start + k - 1].any()
        out = env.true_k_step(batch.s_start[i], batch.actions[i, :k])
        np.testing.assert_array_equal(out, batch.s_end[i])
        np.testing.assert_array_equal(batch.actions[i, k:], 0.0)


def test_uniform_k_chi_square():
    buf, _ = filled(episodes=3)
    batch = buf.sample_sequences(50_000, 5, np.random.default_rng(2))
    counts = np.bincount(batch.k, minlength=6)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_rollout_start_windows():
    buf, _ = filled(episodes=2)
    seed = buf.sample_rollout_starts(64, 5, np.random.default_rng(3))
    assert seed.states.shape == (64, 5, 3) and seed.actions.shape == (64, 4, 1)
    for i, st in enumerate(seed.index):
        np.testing.assert_array_equal(seed.states[i, 1:], buf.s_next[st: st + 4])
    assert (buf.remaining()[seed.index] >= 5).all()


def test_replay_capacity_evicts_oldest():
    buf = ReplayBuffer(1, 1, capacity=10)
    for t in range(25):
        buf.add([t], [0], float(t), [t + 1], done=False)
    assert len(buf) <= 10
    r = buf.arrays()["r"]
    assert r[-1] == 24 and np.all(np.diff(r) == 1)


def test_model_buffer_fifo_keeps_order():
    mb = ModelBuffer(1, 1, capacity=7)
    for start in range(0, 20, 3):
        vals = np.arange(start, start + 3, dtype=float)
        mb.add_batch(vals[:, None], vals[:, None], vals, vals[:, None], np.zeros(3, bool))
    np.testing.assert_array_equal(mb.ordered()["r"], np.arange(14, 21))
    assert mb.total_added == 21 and len(mb) == 7


def test_mixed_batch_fraction():
    buf = ReplayBuffer(1, 1)
    for t in range(50):
        buf.add([0], [0], 1.0, [0], done=False)
    mb = ModelBuffer(1, 1, 100)
    mb.add_batch(np.zeros((100, 1)), np.zeros((100, 1)), np.full(100, -1.0), np.zeros((100, 1)), np.zeros(100, bool))
    out = mixed_batch(buf, mb, 200, 0.05, np.random.default_rng(0))
    assert (out["r"] == 1.0).sum() == 10
    only_real = mixed_batch(buf, ModelBuffer(1, 1, 5), 20, 0.05, np.random.default_rng(0))
    assert (only_real["r"] == 1.0).all()


def test_dataset_round_trip_bit_exact(tmp_path):
    buf, _ = filled(episodes=3)
    path = tmp_path / "d.admd"
    write_dataset(path, buf, {"env": "pendulum"})
    back, manifest = read_dataset(path)
    assert manifest == {"env": "pendulum"}
    a, b = buf.arrays(), back.arrays()
    for key in ("s", "a", "r", "s_next"):
        assert a[key].astype("<f4").tobytes() == b[key].astype("<f4").tobytes()
    np.testing.assert_array_equal(a["done"], b["done"])
    np.testing.assert_array_equal(a["episode_id"], b["episode_id"])
    assert path.read_bytes()[:4] == b"ADMD"


def test_read_rejects_foreign_file(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"ADMP" + bytes(40))
    with pytest.raises(ValueError, match="not a dataset"):
        read_dataset(p)


def test_gen_dataset_counts_and_determinism(tmp_path):
    m1 = gen_dataset("pendulum", "random", 200, 0, tmp_path / "a.admd")
    gen_dataset("pendulum", "random", 200, 0, tmp_path / "b.admd")
    assert m1["transitions"] == 40000 and m1["episodes"] == 200
    buf, _ = read_dataset(tmp_path / "a.admd")
    assert buf.n_episodes == 200
    assert (tmp_path / "a.admd").read_bytes() == (tmp_path / "b.admd").read_bytes()


def test_pointmass_terminal_flags_survive_round_trip(tmp_path):
    gen_dataset("pointmass", "random", 5, 0, tmp_path / "p.admd")
    buf, _ = read_dataset(tmp_path / "p.admd")
    arr = buf.arrays()
    assert (arr["terminal"] <= arr["done"]).all()
