import numpy as np
import pytest

from admpo.datasets import BehaviorSpec, collect
from admpo.envs import make_env
from admpo.evalkit import (FLOAT32_MAX, average_curves, compounding_error, m_sweep, pearson, sweep_spread,
                           true_errors, uncertainty_scatter, write_sweep_csv)
from admpo.exceptions import ConfigurationError
from admpo.models import AnyStepDynamicsModel
from admpo.models._base import GaussianPrediction
from admpo.models.oracle import TrueDynamicsModel


@pytest.fixture(scope="module")
def pend():
    env = make_env("pendulum")
    buf, _ = collect(env, BehaviorSpec.from_any("random"), 4, np.random.default_rng(0))
    return env, buf


@pytest.fixture(scope="module")
def tiny_adm(pend):
    return AnyStepDynamicsModel(m=3, hidden_size=16, head_hidden=(16,), max_epochs=3,
                                max_batches_per_epoch=10).fit(pend[1])


def test_oracle_model_has_zero_error(pend):
    env, buf = pend
    curve = compounding_error(TrueDynamicsModel(env, m=3), buf, 30, 20, m=3)
    assert curve.mean_error.shape == (30,) and list(curve.lengths) == list(range(1, 31))
    assert np.all(curve.mean_error == 0.0)


def test_curve_shape_and_determinism(pend, tiny_adm):
    _, buf = pend
    a = compounding_error(tiny_adm, buf, 10, 15, seed=2)
    b = compounding_error(tiny_adm, buf, 10, 15, seed=2)
    assert len(a.mean_error) == 10 and a.n_starts == 15
    assert a.mean_error.tobytes() == b.mean_error.tobytes()
    assert np.all(a.mean_error >= 0)


def test_insufficient_length_is_configuration_error(pend, tiny_adm):
    with pytest.raises(ConfigurationError):
        compounding_error(tiny_adm, pend[1], 199, 5)


class Exploding:
    m = 1
    state_scale = np.ones(3)

    def predict_gaussian(self, s, actions, k=None):
        big = np.full_like(s, np.inf)
        return GaussianPrediction(big, np.ones_like(s), np.zeros(len(s)), np.ones(len(s)))


def test_overflow_clamped_to_float32_max(pend):
    curve = compounding_error(Exploding(), pend[1], 3, 4, m=1)
    assert np.all(curve.mean_error == FLOAT32_MAX)


def test_average_curves(pend, tiny_adm):
    curves = [compounding_error(tiny_adm, pend[1], 5, 5, seed=s) for s in range(3)]
    avg = average_curves(curves)
    np.testing.assert_allclose(avg.mean_error, np.mean([c.mean_error for c in curves], axis=0))
    assert avg.n_seeds == 3


def test_pearson_degenerate_and_duplicates():
    assert pearson(np.ones(10), np.arange(10)) == (0.0, True)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    r, deg = pearson(x, y)
    r2, _ = pearson(np.tile(x, 2), np.tile(y, 2))
    assert not deg and r2 == pytest.approx(r, abs=1e-12)
    assert pearson(x, 2 * x + 1)[0] == pytest.approx(1.0)


def test_scatter_errors_recompute_bit_exact(pend, tiny_adm):
    env, buf = pend
    policies = {"random": lambda s, rngs: np.stack([g.uniform(-1, 1, 1) for g in rngs]),
                "zero": lambda s, rngs: np.zeros((len(s), 1))}
    sc = uncertainty_scatter(tiny_adm, buf, env, policies, 23, horizon=5, seed=1)
    assert len(sc.u) == 46 and set(sc.tags) == {"random", "zero"}
    inp = sc.inputs
    again = true_errors(env, tiny_adm, inp["cond"], inp["plans"], inp["k"], inp["mean_s"])
    assert again.tobytes() == sc.err.tobytes()
    assert -1.0 <= sc.r <= 1.0 and np.all(sc.u >= 0)
    sc2 = uncertainty_scatter(tiny_adm, buf, env, policies, 23, horizon=5, seed=1)
    assert sc2.u.tobytes() == sc.u.tobytes()


def test_m_sweep_table(tmp_path):
    rows = m_sweep(lambda m, s: -100.0 * m - s, [2, 3, 5], seeds=(0, 1, 2))
    assert [r.m for r in rows] == [2, 3, 5]
    assert rows[0].mean_return == pytest.approx(-201.0)
    assert sweep_spread(rows) == pytest.approx(300.0 / 201.0)
    assert len(m_sweep(lambda m, s: 1.0, [4])) == 1
    with pytest.raises(ConfigurationError):
        m_sweep(lambda m, s: 0.0, [0])
    path = tmp_path / "s.csv"
    write_sweep_csv(path, rows)
    assert path.read_text().splitlines()[0] == "m,mean_return,std_return"
