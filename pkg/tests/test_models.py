import math

import numpy as np
import pytest

from admpo import autodiff as ad
from admpo.data import ReplayBuffer
from admpo.exceptions import ConfigurationError, UsageError
from admpo.models import AnyStepDynamicsModel
from admpo.models._base import nll_value
from admpo.models.baselines import BootstrapRNNModel, EnsembleDynamicsModel

A = np.array([[0.9, 0.1], [-0.1, 0.9]])
B = np.array([[0.0], [0.5]])
NOISE = 0.05


def linear_buffer(episodes=60, length=50, noise=NOISE, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(2, 1)
    for _ in range(episodes):
        s = rng.normal(size=2)
        for t in range(length):
            a = rng.uniform(-1, 1, 1)
            s2 = A @ s + B @ a + noise * rng.normal(size=2)
            buf.add(s, a, float(-s @ s), s2, done=t == length - 1)
            s = s2
    return buf


def small(m=3, **kw):
    base = dict(m=m, hidden_size=32, head_hidden=(32, 32), max_epochs=40, max_batches_per_epoch=40, random_state=0)
    base.update(kw)
    return AnyStepDynamicsModel(**base)


@pytest.fixture(scope="module")
def linear_model():
    return small(m=3).fit(linear_buffer())


def test_linear_gaussian_recovered(linear_model):
    test = linear_buffer(episodes=5, seed=9)
    seq = test.all_sequences(1, 3)
    pred = linear_model.predict_gaussian(seq.s_start, seq.actions, seq.k)
    clean = seq.s_start @ A.T + seq.actions[:, 0] @ B.T
    assert np.abs(pred.mean_s - clean).mean() < 0.02
    assert 0.03 <= pred.std_s.mean() <= 0.08


@pytest.fixture(scope="module")
def noise_free_model():
    return small(m=1, max_epochs=60).fit(linear_buffer(noise=0.0))


def _normalized_log_std(model):
    seq = linear_buffer(episodes=3, noise=0.0, seed=5).all_sequences(1, 1)
    pred = model.predict_gaussian(seq.s_start, seq.actions)
    return np.log(pred.std_s / model.state_scale)


def test_noise_free_std_far_below_noisy_std(noise_free_model, linear_model):
    seq = linear_buffer(episodes=3, seed=5).all_sequences(1, 3)
    noisy = np.log(linear_model.predict_gaussian(seq.s_start, seq.actions, seq.k).std_s / linear_model.state_scale)
    assert np.median(_normalized_log_std(noise_free_model)) < np.median(noisy) - math.log(10.0)


@pytest.mark.xfail(strict=True, reason="Adam jitter keeps the mean residual near 1e-3, so the learned "
                                       "std settles around exp(-6), not within 4x of exp(-10)")
def test_noise_free_std_reaches_lower_clamp(noise_free_model):
    lower = noise_free_model.net_.head.min_log_std.data[:2]
    assert np.median(_normalized_log_std(noise_free_model) - lower) < math.log(4.0)


def test_predictions_pure_and_order_sensitive(linear_model):
    rng = np.random.default_rng(1)
    s = rng.normal(size=(4, 2))
    acts = rng.uniform(-1, 1, size=(4, 3, 1))
    p1 = linear_model.predict_gaussian(s, acts)
    p2 = linear_model.predict_gaussian(s, acts)
    assert p1.mean_s.tobytes() == p2.mean_s.tobytes()
    flipped = linear_model.predict_gaussian(s, acts[:, ::-1])
    assert not np.allclose(p1.mean_s, flipped.mean_s)


def test_encode_predict_matches_batch(linear_model):
    s = np.array([0.3, -0.2])
    acts = np.array([[0.5], [-0.5]])
    one = linear_model.encode_predict(s, acts)
    batch = linear_model.predict_gaussian(s[None], np.concatenate([acts, [[0.0]]])[None], k=[2])
    np.testing.assert_allclose(one.mean_s, batch.mean_s[0], atol=1e-6)


def test_padding_beyond_k_is_ignored(linear_model):
    s = np.zeros((2, 2))
    acts = np.zeros((2, 3, 1))
    acts[:, 0] = 0.4
    acts[1, 1:] = 7.0
    p = linear_model.predict_gaussian(s, acts, k=[1, 1])
    np.testing.assert_array_equal(p.mean_s[0], p.mean_s[1])


def test_stds_strictly_inside_clamp(linear_model):
    rng = np.random.default_rng(2)
    s = rng.normal(scale=50, size=(100, 2))
    acts = rng.uniform(-30, 30, size=(100, 3, 1))
    p = linear_model.predict_gaussian(s, acts)
    head = linear_model.net_.head
    lo = np.exp(head.min_log_std.data.astype(np.float64))
    hi = np.exp(head.max_log_std.data.astype(np.float64) + np.log1p(np.exp(-(head.max_log_std.data - head.min_log_std.data))))
    norm_std = p.std_s / linear_model.state_scale
    assert np.all(norm_std > lo[:2]) and np.all(norm_std < hi[:2])
    assert np.all(np.isfinite(p.mean_s)) and np.all(p.std_r > 0)


def test_k_out_of_range_is_usage_error(linear_model):
    with pytest.raises(UsageError):
        linear_model.predict_gaussian(np.zeros((1, 2)), np.zeros((1, 3, 1)), k=[4])
    with pytest.raises(UsageError):
        linear_model.predict_gaussian(np.zeros((1, 2)), np.zeros((1, 3, 1)), k=[0])


def test_non_finite_input_is_usage_error(linear_model):
    with pytest.raises(UsageError):
        linear_model.predict_gaussian(np.array([[np.nan, 0.0]]), np.zeros((1, 1, 1)))


def test_zero_head_gives_identity_mean():
    model = small(m=2, max_epochs=1, max_batches_per_epoch=1).fit(linear_buffer(episodes=3))
    for layer in model.net_.head.mlp.layers:
        layer.weight.data[:] = 0.0
        layer.bias.data[:] = 0.0
    s = np.array([[0.5, -1.5]])
    p = model.predict_gaussian(s, np.ones((1, 2, 1)))
    np.testing.assert_allclose(p.mean_s, s, atol=1e-6)
    lo, hi = model.net_.head.min_log_std.data, model.net_.head.max_log_std.data
    expect = ad.soft_clamp(ad.Tensor(np.zeros(3)), ad.Tensor(lo), ad.Tensor(hi)).data
    np.testing.assert_allclose(p.std_s[0] / model.state_scale, np.exp(expect[:2]), rtol=1e-5)


def test_nll_at_mode_with_unit_std():
    d = 4
    out = nll_value(ad.Tensor(np.zeros((1, d))), ad.Tensor(np.zeros((1, d))), np.zeros((1, d)))
    assert out.item() == pytest.approx(0.5 * d * math.log(2 * math.pi))


@pytest.mark.parametrize("err,increases", [(0.0, True), (0.5, True), (3.0, False)])
def test_nll_doubling_sigma(err, increases):
    def nll(log_std):
        return nll_value(ad.Tensor([[0.0]]), ad.Tensor([[log_std]]), np.array([[err]])).item()

    assert (nll(math.log(2.0)) > nll(0.0)) == increases


def test_identical_samples_loss_equals_single(linear_model):
    seq = linear_buffer(episodes=1, seed=3).all_sequences(2, 3)
    one = seq.subset(np.array([0]))
    many = seq.subset(np.zeros(16, dtype=int))
    with ad.no_grad():
        a = linear_model.nll_loss(one).item()
        b = linear_model.nll_loss(many).item()
    assert a == pytest.approx(b, rel=1e-6)


def test_insufficient_data_is_configuration_error():
    buf = linear_buffer(episodes=2, length=3)
    with pytest.raises(ConfigurationError):
        small(m=5).fit(buf)


def test_bad_bounds_rejected():
    with pytest.raises(ConfigurationError):
        small(log_std_bounds=(1.0, -1.0)).fit(linear_buffer(episodes=2))


def test_holdout_reports_every_k(linear_model):
    assert len(linear_model.holdout_nll_per_k_) == 3
    assert linear_model.report_["epochs"] >= 1


def test_save_load_round_trip(tmp_path, linear_model):
    path = tmp_path / "m.admp"
    linear_model.save(path)
    back = AnyStepDynamicsModel.load(path)
    s = np.ones((2, 2))
    acts = np.ones((2, 3, 1))
    np.testing.assert_array_equal(back.predict(s, acts), linear_model.predict(s, acts))
    with pytest.raises(ConfigurationError):
        EnsembleDynamicsModel.load(path)


def test_get_params_round_trip():
    est = small(m=4)
    assert est.get_params()["m"] == 4
    assert est.set_params(m=2).m == 2


def test_elite_selection_takes_lowest_scores():
    ens = EnsembleDynamicsModel(n_members=5, n_elites=2)
    np.testing.assert_array_equal(ens.select_elites([3.0, -1.0, 2.0, -5.0, 0.0]), [1, 3])


def test_single_member_ensemble_is_one_network():
    buf = linear_buffer(episodes=10)
    ens = EnsembleDynamicsModel(n_members=1, n_elites=1, hidden=(32, 32), max_epochs=5,
                                max_batches_per_epoch=20).fit(buf)
    s, a = np.ones((3, 2)), np.zeros((3, 1))
    np.testing.assert_array_equal(ens.predict_gaussian(s, a, rng=0).mean_s, ens.predict_member(0, s, a).mean_s)


def test_ensemble_members_independent():
    ens = EnsembleDynamicsModel(n_members=3, n_elites=2, hidden=(8,), max_epochs=1, max_batches_per_epoch=1)
    ens.fit(linear_buffer(episodes=2))
    w = [m.mlp.layers[0].weight.data for m in ens.members_]
    assert not np.allclose(w[0], w[1]) and not np.allclose(w[1], w[2])


def test_ensemble_one_step_comparable_to_adm(linear_model):
    buf = linear_buffer()
    ens = EnsembleDynamicsModel(n_members=3, n_elites=2, hidden=(32, 32), max_epochs=40,
                                max_batches_per_epoch=40).fit(buf)
    seq = linear_buffer(episodes=5, seed=9).all_sequences(1, 3)
    clean = seq.s_start @ A.T + seq.actions[:, 0] @ B.T
    e_adm = np.abs(linear_model.predict(seq.s_start, seq.actions, seq.k) - clean).mean()
    e_ens = np.abs(ens.predict(seq.s_start, seq.actions[:, 0], rng=0) - clean).mean()
    assert 0.5 * e_adm <= e_ens <= 2.0 * e_adm


def test_bootstrap_rnn_predicts_one_step_past_window():
    buf = linear_buffer(episodes=30)
    rnn = BootstrapRNNModel(m=3, hidden_size=32, head_hidden=(32, 32), max_epochs=30,
                            max_batches_per_epoch=40).fit(buf)
    idx = np.arange(0, 40)[:, None] + np.arange(3)[None, :]
    pred = rnn.predict(buf.s[idx], buf.a[idx])
    clean = buf.s[idx[:, -1]] @ A.T + buf.a[idx[:, -1]] @ B.T
    assert np.abs(pred - clean).mean() < 0.05
    with pytest.raises(UsageError):
        rnn.predict(np.zeros((1, 3, 2)), np.zeros((1, 2, 1)))
