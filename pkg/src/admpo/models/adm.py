"""The any-step dynamics model.

A GRU reads ``(s_t, a_{t+i})`` for ``i = 0..k-1`` (the start state is repeated
next to every action), and an MLP head maps the final hidden state to a
diagonal Gaussian over the normalized state delta ``(s_{t+k} - s_t) / std_s``
and the normalized reward ``r_{t+k}``.  One network serves every
``k`` in ``[1, m]``.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..data import ReplayBuffer, SequenceBatch
from ..exceptions import ConfigurationError, TrainingError, UsageError
from ..utils.validation import check_array, check_positive_int, check_random_state
from ._base import DynamicsHead, GaussianDynamicsEstimator, GaussianPrediction, locate_nonfinite, nll_value


class _AdmNet(ad.Module):
    def __init__(self, state_dim, action_dim, hidden_size, head_hidden, log_std_bounds, rng):
        self.gru = ad.GRUCell(state_dim + action_dim, hidden_size, rng)
        self.head = DynamicsHead(hidden_size, head_hidden, state_dim + 1, log_std_bounds, rng)


def right_aligned_steps(k: np.ndarray, actions: np.ndarray):
    """Yield ``(action_rows, mask)`` for a batch of left-aligned action sequences.

    Sequences are run right-aligned over ``max(k)`` steps so every sample ends
    on the same step; rows whose sequence has not started yet get mask 0.
    """
    b = len(k)
    length = int(k.max())
    offset = length - k
    rows = np.arange(b)
    full = bool(np.all(k == length))
    for t in range(length):
        idx = np.clip(t - offset, 0, None)
        mask = None if full else (t >= offset)
        yield actions[rows, idx], mask


class AnyStepDynamicsModel(GaussianDynamicsEstimator):
    """Recurrent Gaussian model of ``(s_{t+k}, r_{t+k} | s_t, a_{t:t+k-1})`` for ``1 <= k <= m``.

    Parameters
    ----------
    m : int
        Maximum backtracking length.
    hidden_size : int
        GRU hidden units.
    head_hidden : tuple of int
        Hidden layer sizes of the Gaussian head.
    log_std_bounds : (float, float)
        Initial soft-clamp bounds on the log standard deviation.
    holdout_fraction : float
        Fraction of start indices held out for early stopping.
    patience : int
        Epochs without holdout improvement before stopping.
    max_epochs, max_batches_per_epoch : int or None
        Optional caps on training length.
    min_batches_per_epoch : int or None
        Lengthen epochs on small datasets so early stopping sees real progress.
    bound_reg : float
        Weight of the penalty on the width of the learnable clamp bounds.
    warm_start : bool
        Continue from the current weights on repeated ``fit`` calls.
    """

    _model_kind = "adm"

    def __init__(self, m=5, hidden_size=200, head_hidden=(200, 200), log_std_bounds=(-10.0, 0.5),
                 learning_rate=1e-3, batch_size=256, holdout_fraction=0.1, patience=5,
                 max_epochs=None, max_batches_per_epoch=None, min_batches_per_epoch=None, max_holdout=2000,
                 bound_reg=1e-4, warm_start=False, random_state=0):
        self.m = m
        self.hidden_size = hidden_size
        self.head_hidden = head_hidden
        self.log_std_bounds = log_std_bounds
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.holdout_fraction = holdout_fraction
        self.patience = patience
        self.max_epochs = max_epochs
        self.max_batches_per_epoch = max_batches_per_epoch
        self.min_batches_per_epoch = min_batches_per_epoch
        self.max_holdout = max_holdout
        self.bound_reg = bound_reg
        self.warm_start = warm_start
        self.random_state = random_state

    def _validate_params(self):
        check_positive_int(self.m, "m")
        lo, hi = self.log_std_bounds
        if not lo < hi:
            raise ConfigurationError("log_std_bounds must satisfy lower < upper", key="log_std_bounds")

    def _build(self, rng):
        self.net_ = _AdmNet(self.state_dim_, self.action_dim_, self.hidden_size, tuple(self.head_hidden),
                            self.log_std_bounds, rng)

    def _named_state(self):
        return self.net_.state_dict()

    def _load_named_state(self, state):
        self.net_.load_state_dict(state)

    @property
    def _dtype(self):
        return self.net_.gru.w_ih.data.dtype

    # ------------------------------------------------------------ forward

    def _forward(self, s_start, actions, k):
        """Raw-unit inputs -> (mean, log_std) tensors in normalized target space."""
        dt = self._dtype
        s_n = self.state_norm_.transform(s_start).astype(dt)
        a_n = self.action_norm_.transform(actions).astype(dt)
        k = np.asarray(k)
        h = ad.Tensor(np.zeros((len(k), self.hidden_size), dtype=dt))
        for a_t, mask in right_aligned_steps(k, a_n):
            x = ad.Tensor(np.concatenate([s_n, a_t], axis=1), dtype=dt)
            h = self.net_.gru(x, h, mask=mask)
        return self.net_.head(h)

    def nll_loss(self, batch: SequenceBatch, regularize: bool = True) -> ad.Tensor:
        """Mean negative log-likelihood of the batch's k-step targets."""
        if len(batch) == 0:
            raise UsageError("nll_loss needs a non-empty batch")
        if np.any(batch.k < 1) or np.any(batch.k > self.m):
            raise UsageError(f"sequence lengths must lie in [1, {self.m}]")
        target = self._targets(batch.s_start, batch.s_end, batch.r_end).astype(self._dtype)
        mean = log_std = None
        try:
            mean, log_std = self._forward(batch.s_start, batch.actions, batch.k)
            return nll_value(mean, log_std, target,
                             self.net_.head.bound_penalty() if regularize else None, self.bound_reg)
        except ad.NonFiniteError as exc:
            where = locate_nonfinite(mean, log_std, target) if mean is not None else -1
            raise TrainingError(f"non-finite model loss (first offending sample index {where})") from exc

    # ------------------------------------------------------------ fit

    def fit(self, buffer: ReplayBuffer, y=None):
        """Maximize the any-step likelihood on ``buffer`` with early stopping on a holdout split."""
        self._validate_params()
        rng = check_random_state(self.random_state)
        m = self.m
        if len(buffer) == 0 or buffer.max_episode_length() < m:
            raise ConfigurationError(
                f"insufficient data: need an episode with >= {m} transitions, "
                f"longest has {buffer.max_episode_length() if len(buffer) else 0}", key="m")
        refit = self.warm_start and hasattr(self, "net_")
        if not refit:
            self.state_dim_ = buffer.state_dim
            self.action_dim_ = buffer.action_dim
        self._fit_normalizers(buffer)
        if not refit:
            self._build(rng)

        n = len(buffer)
        rem = buffer.remaining()
        hold = np.zeros(n, dtype=bool)
        n_hold = max(1, int(round(n * self.holdout_fraction))) if self.holdout_fraction > 0 else 0
        hold[rng.permutation(n)[:n_hold]] = True
        train_starts, hold_sets = {}, {}
        for k in range(1, m + 1):
            ok = rem >= k
            train_starts[k] = np.flatnonzero(ok & ~hold)
            h_idx = np.flatnonzero(ok & hold)
            if len(train_starts[k]) == 0 or (n_hold and len(h_idx) == 0):
                raise ConfigurationError(f"insufficient data for k={k}: no train/holdout windows", key="m")
            if len(h_idx) > self.max_holdout:
                h_idx = np.sort(rng.choice(h_idx, self.max_holdout, replace=False))
            hold_sets[k] = buffer.gather_sequences(h_idx, np.full(len(h_idx), k), m) if n_hold else None
        self.n_train_ = int((~hold).sum())

        def train_batch(rng):
            ks = rng.integers(1, m + 1, size=self.batch_size)
            starts = np.empty(self.batch_size, dtype=np.int64)
            for k in np.unique(ks):
                sel = np.flatnonzero(ks == k)
                pool = train_starts[int(k)]
                starts[sel] = pool[rng.integers(0, len(pool), size=len(sel))]
            return self.nll_loss(buffer.gather_sequences(starts, ks, m))

        def holdout_eval():
            if not n_hold:
                return {"score": 0.0, "nll_per_k": []}
            per_k = self.holdout_nll_per_k(hold_sets)
            return {"score": float(np.mean(per_k)), "nll_per_k": per_k}

        self.report_ = self._run_training([self.net_], train_batch, holdout_eval, rng)
        best = min(self.report_["history"], key=lambda h: h["score"])
        self.holdout_nll_per_k_ = best["nll_per_k"]
        return self

    def holdout_nll_per_k(self, sets: dict) -> list:
        out = []
        with ad.no_grad():
            for k in sorted(sets):
                out.append(float(self.nll_loss(sets[k], regularize=False).item()))
        return out

    # ------------------------------------------------------------ predict

    def predict_gaussian(self, s_t, actions, k=None) -> GaussianPrediction:
        """Gaussian over ``(s_{t+k}, r_{t+k})`` for a batch of plans.

        ``s_t`` is (B, S); ``actions`` is (B, L, A) left-aligned.  ``k`` gives
        each row's plan length (defaults to L for every row).
        """
        s_t = check_array(s_t, "s_t", ndim=2, last_dim=self.state_dim_)
        actions = check_array(actions, "actions", ndim=3, last_dim=self.action_dim_)
        if k is None:
            k = np.full(len(s_t), actions.shape[1])
        k = np.asarray(k, dtype=np.int64)
        if np.any(k < 1) or np.any(k > self.m) or np.any(k > actions.shape[1]):
            raise UsageError(f"plan length k must lie in [1, {self.m}] and fit the action array")
        with ad.no_grad():
            mean, log_std = self._forward(s_t, actions, k)
        return self._to_prediction(s_t, mean.data.astype(np.float64), log_std.data.astype(np.float64))

    def encode_predict(self, s_t, actions) -> GaussianPrediction:
        """Single-plan prediction: ``s_t`` is (S,), ``actions`` is (k, A)."""
        s_t = check_array(s_t, "s_t", ndim=1)
        actions = check_array(actions, "actions", ndim=2)
        return self.predict_gaussian(s_t[None], actions[None])[0]

    def predict(self, s_t, actions, k=None) -> np.ndarray:
        return self.predict_gaussian(s_t, actions, k).mean_s

    @property
    def state_scale(self) -> np.ndarray:
        return self.state_norm_.std
