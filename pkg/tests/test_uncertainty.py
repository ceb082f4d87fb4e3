import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admpo.exceptions import UsageError
from admpo.uncertainty import PenaltyConfig, adm_uncertainty, penalize, total_variance


def test_identical_heads_give_summed_variance():
    mu, sd = np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.5, 2.0])
    r = adm_uncertainty([(mu, sd)] * 4, m=4)
    assert abs(r.u - np.sum(sd ** 2)) < 1e-9


def test_identical_means_zero_std_give_zero():
    mu = np.array([1.0, 2.0])
    assert adm_uncertainty([(mu, np.zeros(2))] * 3).u == 0.0


def test_two_point_hand_case():
    assert adm_uncertainty([(np.array([0.0]), np.array([0.0])), (np.array([2.0]), np.array([0.0]))]).u == 1.0


def test_state_scale_normalizes():
    preds = [(np.array([0.0]), np.array([0.0])), (np.array([4.0]), np.array([0.0]))]
    assert adm_uncertainty(preds, state_scale=np.array([2.0])).u == pytest.approx(1.0)


def test_wrong_count_and_dims_rejected():
    with pytest.raises(UsageError):
        adm_uncertainty([(np.zeros(2), np.ones(2))] * 2, m=3)
    with pytest.raises(UsageError):
        adm_uncertainty([(np.zeros(2), np.ones(3))])
    with pytest.raises(UsageError):
        adm_uncertainty([])


def test_matches_two_stage_monte_carlo():
    rng = np.random.default_rng(0)
    m, d, n = 4, 3, 400_000
    mu = rng.normal(size=(m, d))
    sd = rng.uniform(0.1, 1.0, size=(m, d))
    k = rng.integers(0, m, size=n)
    draws = mu[k] + sd[k] * rng.standard_normal((n, d))
    mc = draws.var(axis=0).sum()
    assert adm_uncertainty(list(zip(mu, sd))).u == pytest.approx(mc, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_permutation_invariant_and_nonnegative(m, d, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(m, d))
    sd = rng.uniform(0, 2, size=(m, d))
    base = adm_uncertainty(list(zip(mu, sd))).u
    perm = rng.permutation(m)
    assert adm_uncertainty(list(zip(mu[perm], sd[perm]))).u == pytest.approx(base, rel=1e-12, abs=1e-12)
    assert base >= 0.0


def test_zero_iff_equal_means_and_zero_std():
    mu = np.array([[1.0, 2.0], [1.0, 2.0 + 1e-3]])
    assert adm_uncertainty(list(zip(mu, np.zeros_like(mu)))).u > 0
    assert adm_uncertainty(list(zip(mu[[0, 0]], np.full((2, 2), 1e-3)))).u > 0


def test_total_variance_never_negative_from_rounding():
    mu = np.full((5, 1, 1), 1e8)
    assert total_variance(mu, np.zeros_like(mu)).min() >= 0.0


def test_penalty_examples():
    assert penalize(1.3, 0.7, PenaltyConfig(beta=0.0)) == 1.3
    assert penalize(1.0, 0.2, PenaltyConfig(beta=5.0)) == pytest.approx(0.0)
    us = np.linspace(0, 3, 10)
    out = penalize(np.ones(10), us, PenaltyConfig(beta=0.5))
    assert np.all(np.diff(out) < 0)


def test_penalty_validation():
    with pytest.raises(UsageError):
        PenaltyConfig(beta=-0.1)
    with pytest.raises(UsageError):
        penalize(float("inf"), 0.0, PenaltyConfig(1.0))
