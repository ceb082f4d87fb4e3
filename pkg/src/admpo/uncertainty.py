"""Backtracking-disagreement uncertainty and the reward penalty built on it.

Given the m Gaussian predictions of the same next state obtained with
backtracking lengths k = 1..m, the uncertainty is the L1 norm of the total
variance of the two-stage draw "pick k uniformly, then sample its Gaussian":

    u = || mean_k(std_k^2 + mu_k^2) - (mean_k mu_k)^2 ||_1

evaluated per state dimension in normalized units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError


@dataclass
class UncertaintyReading:
    u: float
    means: np.ndarray
    stds: np.ndarray
    m: int


@dataclass
class PenaltyConfig:
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise UsageError(f"penalty coefficient beta must be >= 0, got {self.beta}")


def total_variance(means, stds, axis: int = 0) -> np.ndarray:
    """Per-dimension variance of the uniform mixture of Gaussians along ``axis``."""
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    second = np.mean(stds ** 2 + means ** 2, axis=axis)
    mu_bar = np.mean(means, axis=axis)
    # the difference is a variance, so only rounding can push it below zero
    return np.maximum(second - mu_bar ** 2, 0.0)


def uncertainty_from_arrays(means, stds, state_scale=None) -> np.ndarray:
    """Vectorized form: ``means``/``stds`` are (m, B, S); returns u with shape (B,)."""
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    if means.shape != stds.shape or means.ndim != 3:
        raise UsageError(f"means/stds must both be (m, B, S), got {means.shape} and {stds.shape}")
    if state_scale is not None:
        scale = np.asarray(state_scale, dtype=np.float64)
        means, stds = means / scale, stds / scale
    return total_variance(means, stds, axis=0).sum(axis=-1)


def adm_uncertainty(predictions, m: int | None = None, state_scale=None) -> UncertaintyReading:
    """Uncertainty for one target step from its m per-k predictions (k = 1..m).

    ``predictions`` is a sequence of objects with ``mean_s``/``std_s`` (1-d),
    or of ``(mean, std)`` pairs.  ``state_scale`` converts raw state units to
    the normalized space the reading is expressed in.
    """
    preds = list(predictions)
    if m is not None and len(preds) != m:
        raise UsageError(f"expected {m} predictions (one per backtracking length), got {len(preds)}")
    if not preds:
        raise UsageError("need at least one prediction")
    pairs = [(p.mean_s, p.std_s) if hasattr(p, "mean_s") else p for p in preds]
    means = np.array([np.atleast_1d(np.asarray(mu, dtype=np.float64)) for mu, _ in pairs])
    stds = np.array([np.atleast_1d(np.asarray(sd, dtype=np.float64)) for _, sd in pairs])
    if means.shape != stds.shape:
        raise UsageError("mean and std dimensions differ")
    u = float(uncertainty_from_arrays(means[:, None, :], stds[:, None, :], state_scale)[0])
    return UncertaintyReading(u=u, means=means, stds=stds, m=len(preds))


def penalize(r, reading, config: PenaltyConfig):
    """Pessimistic reward ``r - beta * u``; ``reading`` may be a reading or raw u values."""
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise UsageError("reward must be finite")
    u = reading.u if isinstance(reading, UncertaintyReading) else np.asarray(reading, dtype=np.float64)
    out = r - config.beta * u
    return float(out) if out.ndim == 0 else out
