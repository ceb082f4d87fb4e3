"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np

from ..exceptions import UsageError


def check_array(x, name: str, ndim: int | None = None, last_dim: int | None = None,
                dtype=np.float64) -> np.ndarray:
    """Return ``x`` as a finite float array, optionally checking rank and width."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise UsageError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if last_dim is not None and (arr.ndim == 0 or arr.shape[-1] != last_dim):
        raise UsageError(f"{name}: expected last dimension {last_dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{name}: contains non-finite values")
    return arr


def check_states(s, state_dim: int) -> tuple[np.ndarray, bool]:
    """Accept one state or a batch; returns (batch, was_single)."""
    arr = check_array(s, "state", last_dim=state_dim)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise UsageError(f"state: expected 1-d or 2-d array, got shape {arr.shape}")
    return arr, False


def check_random_state(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if int(value) != value or value < minimum:
        raise UsageError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
