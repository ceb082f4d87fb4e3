"""Comparison dynamics models: a probabilistic ensemble and a bootstrapping RNN.

Both predict one step ahead, so open-loop roll-outs feed every prediction
back in as the next input.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..data import ReplayBuffer
from ..exceptions import ConfigurationError, UsageError
from ..utils.validation import check_array, check_positive_int, check_random_state
from ._base import DynamicsHead, GaussianDynamicsEstimator, GaussianPrediction, nll_value
from .adm import right_aligned_steps


def _split(buffer: ReplayBuffer, min_len: int, fraction: float, rng, max_holdout: int):
    n = len(buffer)
    ok = buffer.remaining() >= min_len
    hold = np.zeros(n, dtype=bool)
    n_hold = max(1, int(round(n * fraction))) if fraction > 0 else 0
    hold[rng.permutation(n)[:n_hold]] = True
    train = np.flatnonzero(ok & ~hold)
    held = np.flatnonzero(ok & hold)
    if len(train) == 0 or (n_hold and len(held) == 0):
        raise ConfigurationError(f"insufficient data: no windows of length {min_len}", key="m")
    if len(held) > max_holdout:
        held = np.sort(rng.choice(held, max_holdout, replace=False))
    return train, held


class EnsembleDynamicsModel(GaussianDynamicsEstimator):
    """Independently initialized single-step Gaussian MLPs; predictions come from a random elite."""

    _model_kind = "ensemble"

    def __init__(self, n_members=7, n_elites=5, hidden=(200, 200, 200, 200), log_std_bounds=(-10.0, 0.5),
                 learning_rate=1e-3, batch_size=256, holdout_fraction=0.1, patience=5, max_epochs=None,
                 max_batches_per_epoch=None, min_batches_per_epoch=None, max_holdout=2000, bound_reg=1e-4, random_state=0):
        self.n_members = n_members
        self.n_elites = n_elites
        self.hidden = hidden
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
        self.random_state = random_state

    def _build(self, rng):
        n_in = self.state_dim_ + self.action_dim_
        self.members_ = [DynamicsHead(n_in, tuple(self.hidden), self.state_dim_ + 1, self.log_std_bounds, rng)
                         for _ in range(self.n_members)]
        if not hasattr(self, "elites_"):
            self.elites_ = np.arange(min(self.n_elites, self.n_members))

    def _named_state(self):
        out = {}
        for i, member in enumerate(self.members_):
            out.update({f"member{i}.{k}": v for k, v in member.state_dict().items()})
        out["elites"] = np.asarray(self.elites_, dtype=np.float32)
        return out

    def _load_named_state(self, state):
        for i, member in enumerate(self.members_):
            prefix = f"member{i}."
            member.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})
        self.elites_ = np.asarray(state["elites"], dtype=np.int64)

    def _inputs(self, s, a):
        dt = self.members_[0].min_log_std.data.dtype
        x = np.concatenate([self.state_norm_.transform(s), self.action_norm_.transform(a)], axis=1)
        return ad.Tensor(x, dtype=dt)

    def member_loss(self, i, s, a, r, s_next, regularize=True) -> ad.Tensor:
        member = self.members_[i]
        mean, log_std = member(self._inputs(s, a))
        target = self._targets(s, s_next, r).astype(mean.data.dtype)
        return nll_value(mean, log_std, target, member.bound_penalty() if regularize else None, self.bound_reg)

    def fit(self, buffer: ReplayBuffer, y=None):
        check_positive_int(self.n_members, "n_members")
        if not 1 <= self.n_elites <= self.n_members:
            raise ConfigurationError("n_elites must lie in [1, n_members]", key="n_elites")
        if len(buffer) == 0:
            raise ConfigurationError("insufficient data: empty buffer")
        rng = check_random_state(self.random_state)
        self.state_dim_, self.action_dim_ = buffer.state_dim, buffer.action_dim
        self._fit_normalizers(buffer)
        self.__dict__.pop("elites_", None)
        self._build(rng)
        train, held = _split(buffer, 1, self.holdout_fraction, rng, self.max_holdout)
        self.n_train_ = len(train)
        arr = buffer.arrays()

        def train_batch(rng):
            total = None
            for i in range(self.n_members):
                idx = train[rng.integers(0, len(train), size=self.batch_size)]
                loss = self.member_loss(i, arr["s"][idx], arr["a"][idx], arr["r"][idx], arr["s_next"][idx])
                total = loss if total is None else total + loss
            return total

        def holdout_eval():
            per = self.holdout_nll(arr["s"][held], arr["a"][held], arr["r"][held], arr["s_next"][held])
            self.elites_ = np.sort(np.argsort(per, kind="stable")[: self.n_elites])
            return {"score": float(np.mean(np.asarray(per)[self.elites_])), "member_nll": per}

        self.report_ = self._run_training(self.members_, train_batch, holdout_eval, rng)
        final = holdout_eval()
        self.member_holdout_nll_ = final["member_nll"]
        return self

    def holdout_nll(self, s, a, r, s_next) -> list:
        with ad.no_grad():
            return [float(self.member_loss(i, s, a, r, s_next, regularize=False).item())
                    for i in range(self.n_members)]

    def select_elites(self, member_scores) -> np.ndarray:
        """Indices of the ``n_elites`` lowest-scoring members."""
        self.elites_ = np.sort(np.argsort(np.asarray(member_scores), kind="stable")[: self.n_elites])
        return self.elites_

    def predict_member(self, i, s, a) -> GaussianPrediction:
        with ad.no_grad():
            mean, log_std = self.members_[i](self._inputs(s, a))
        return self._to_prediction(s, mean.data.astype(np.float64), log_std.data.astype(np.float64))

    def predict_gaussian(self, s, a, rng=None, member=None) -> GaussianPrediction:
        """One-step prediction; each row uses a uniformly drawn elite unless ``member`` is given."""
        s = check_array(s, "s", ndim=2, last_dim=self.state_dim_)
        a = check_array(a, "a", ndim=2, last_dim=self.action_dim_)
        if member is not None:
            return self.predict_member(member, s, a)
        rng = check_random_state(rng)
        pick = self.elites_[rng.integers(0, len(self.elites_), size=len(s))]
        preds = [self.predict_member(i, s, a) for i in self.elites_]
        rows = np.arange(len(s))
        slot = np.searchsorted(self.elites_, pick)
        stack = lambda f: np.stack([getattr(p, f) for p in preds])[slot, rows]  # noqa: E731
        return GaussianPrediction(stack("mean_s"), stack("std_s"), stack("mean_r"), stack("std_r"))

    def predict(self, s, a, rng=None) -> np.ndarray:
        return self.predict_gaussian(s, a, rng).mean_s


class _RnnNet(ad.Module):
    def __init__(self, state_dim, action_dim, hidden_size, head_hidden, log_std_bounds, rng):
        self.gru = ad.GRUCell(state_dim + action_dim, hidden_size, rng)
        self.head = DynamicsHead(hidden_size, head_hidden, state_dim + 1, log_std_bounds, rng)


class BootstrapRNNModel(GaussianDynamicsEstimator):
    """Same recurrent architecture as the any-step model, fed the last ``m`` (s, a) pairs.

    It always predicts the state one step past the end of its history, so in a
    roll-out each prediction becomes part of the next input.
    """

    _model_kind = "bootstrap_rnn"

    def __init__(self, m=5, hidden_size=200, head_hidden=(200, 200), log_std_bounds=(-10.0, 0.5),
                 learning_rate=1e-3, batch_size=256, holdout_fraction=0.1, patience=5, max_epochs=None,
                 max_batches_per_epoch=None, min_batches_per_epoch=None, max_holdout=2000, bound_reg=1e-4, random_state=0):
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
        self.random_state = random_state

    def _build(self, rng):
        self.net_ = _RnnNet(self.state_dim_, self.action_dim_, self.hidden_size, tuple(self.head_hidden),
                            self.log_std_bounds, rng)

    def _named_state(self):
        return self.net_.state_dict()

    def _load_named_state(self, state):
        self.net_.load_state_dict(state)

    def _forward(self, states, actions):
        dt = self.net_.gru.w_ih.data.dtype
        s_n = self.state_norm_.transform(states).astype(dt)
        a_n = self.action_norm_.transform(actions).astype(dt)
        b, length = states.shape[:2]
        h = ad.Tensor(np.zeros((b, self.hidden_size), dtype=dt))
        k = np.full(b, length)
        steps = right_aligned_steps(k, np.concatenate([s_n, a_n], axis=2))
        for x_t, _ in steps:
            h = self.net_.gru(ad.Tensor(x_t, dtype=dt), h)
        return self.net_.head(h)

    def _windows(self, buffer, starts):
        idx = starts[:, None] + np.arange(self.m)[None, :]
        last = idx[:, -1]
        return buffer.s[idx], buffer.a[idx], buffer.r[last], buffer.s_next[last]

    def loss(self, states, actions, r, s_next, regularize=True) -> ad.Tensor:
        mean, log_std = self._forward(states, actions)
        target = self._targets(states[:, -1], s_next, r).astype(mean.data.dtype)
        return nll_value(mean, log_std, target, self.net_.head.bound_penalty() if regularize else None,
                         self.bound_reg)

    def fit(self, buffer: ReplayBuffer, y=None):
        check_positive_int(self.m, "m")
        if len(buffer) == 0 or buffer.max_episode_length() < self.m:
            raise ConfigurationError(f"insufficient data: need an episode with >= {self.m} transitions", key="m")
        rng = check_random_state(self.random_state)
        self.state_dim_, self.action_dim_ = buffer.state_dim, buffer.action_dim
        self._fit_normalizers(buffer)
        self._build(rng)
        train, held = _split(buffer, self.m, self.holdout_fraction, rng, self.max_holdout)
        self.n_train_ = len(train)
        held_w = self._windows(buffer, held)

        def train_batch(rng):
            starts = train[rng.integers(0, len(train), size=self.batch_size)]
            return self.loss(*self._windows(buffer, starts))

        def holdout_eval():
            with ad.no_grad():
                return {"score": float(self.loss(*held_w, regularize=False).item())}

        self.report_ = self._run_training([self.net_], train_batch, holdout_eval, rng)
        return self

    def predict_gaussian(self, states, actions) -> GaussianPrediction:
        """``states`` (B, L, S) and ``actions`` (B, L, A): predict the state after the last pair."""
        states = check_array(states, "states", ndim=3, last_dim=self.state_dim_)
        actions = check_array(actions, "actions", ndim=3, last_dim=self.action_dim_)
        if states.shape[:2] != actions.shape[:2]:
            raise UsageError("states and actions must share batch and history length")
        with ad.no_grad():
            mean, log_std = self._forward(states, actions)
        return self._to_prediction(states[:, -1], mean.data.astype(np.float64), log_std.data.astype(np.float64))

    def predict(self, states, actions) -> np.ndarray:
        return self.predict_gaussian(states, actions).mean_s
