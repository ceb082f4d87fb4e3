"""Shared pieces for the Gaussian dynamics estimators."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from ..exceptions import ConfigurationError, TrainingError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, min_std: float = 1e-6) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), min_std))

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, x):
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class GaussianPrediction:
    """Diagonal Gaussian over (next state, reward) in raw units.

    Arrays are batched: ``mean_s``/``std_s`` are (B, S), ``mean_r``/``std_r`` are (B,).
    """

    mean_s: np.ndarray
    std_s: np.ndarray
    mean_r: np.ndarray
    std_r: np.ndarray

    def __len__(self):
        return len(self.mean_r)

    def __getitem__(self, i) -> "GaussianPrediction":
        return GaussianPrediction(self.mean_s[i], self.std_s[i], self.mean_r[i], self.std_r[i])

    def sample(self, rng: np.random.Generator):
        s = self.mean_s + self.std_s * rng.standard_normal(self.mean_s.shape)
        r = self.mean_r + self.std_r * rng.standard_normal(np.shape(self.mean_r))
        return s, r


class DynamicsHead(ad.Module):
    """MLP from features to (mean, soft-clamped log-std) over ``out_dim`` targets.

    The clamp bounds are learnable per output dimension.
    """

    def __init__(self, n_in: int, hidden, out_dim: int, log_std_bounds, rng):
        self.mlp = ad.MLP([n_in, *hidden, 2 * out_dim], rng, activation="relu")
        self.out_dim = out_dim
        lo, hi = log_std_bounds
        self.min_log_std = ad.Tensor(np.full(out_dim, float(lo)), requires_grad=True)
        self.max_log_std = ad.Tensor(np.full(out_dim, float(hi)), requires_grad=True)

    def __call__(self, feat: ad.Tensor):
        out = self.mlp(feat)
        mean = out[:, : self.out_dim]
        log_std = ad.soft_clamp(out[:, self.out_dim:], self.min_log_std, self.max_log_std)
        return mean, log_std

    def bound_penalty(self) -> ad.Tensor:
        return ad.sub(self.max_log_std.sum(), self.min_log_std.sum())


def nll_value(mean, log_std, target, bound_penalty=None, bound_reg: float = 0.0) -> ad.Tensor:
    """Batch-mean Gaussian NLL summed over target dims, plus an optional bound term."""
    nll = ad.gaussian_nll(target, mean, log_std).sum(axis=1).mean()
    if bound_penalty is not None and bound_reg:
        nll = nll + bound_penalty * bound_reg
    return nll


def locate_nonfinite(mean, log_std, target) -> int:
    with np.errstate(all="ignore"):
        z = (target - mean.data) * np.exp(-log_std.data)
        per = (0.5 * z * z + log_std.data).sum(axis=1)
    bad = np.flatnonzero(~np.isfinite(per))
    return int(bad[0]) if len(bad) else -1


class GaussianDynamicsEstimator(BaseEstimator):
    """Training loop, normalization and checkpointing shared by the dynamics models.

    Subclasses provide ``_build``, ``_train_batch``, ``_holdout_sets`` and
    ``_forward_batch``.
    """

    _model_kind = "base"

    # -- normalization
    def _fit_normalizers(self, buffer):
        arr = buffer.arrays()
        self.state_norm_ = Normalizer.fit(arr["s"])
        self.action_norm_ = Normalizer.fit(arr["a"])
        self.reward_norm_ = Normalizer.fit(arr["r"][:, None])

    def _targets(self, s_from, s_to, r) -> np.ndarray:
        delta = (s_to - s_from) / self.state_norm_.std
        rew = self.reward_norm_.transform(np.asarray(r)[:, None])
        return np.concatenate([delta, rew], axis=1)

    def _to_prediction(self, s_from, mean, log_std) -> GaussianPrediction:
        sd = self.state_dim_
        std = np.exp(log_std)
        mean_s = s_from + mean[:, :sd] * self.state_norm_.std
        std_s = std[:, :sd] * self.state_norm_.std
        mean_r = mean[:, sd] * self.reward_norm_.std[0] + self.reward_norm_.mean[0]
        std_r = std[:, sd] * self.reward_norm_.std[0]
        return GaussianPrediction(mean_s, std_s, mean_r, std_r)

    # -- training
    def _run_training(self, nets, train_batch, holdout_eval, rng):
        """Adam over ``nets`` (list of modules, trained jointly) with early stopping.

        ``train_batch(rng)`` returns a loss tensor; ``holdout_eval()`` returns a
        dict of scalar holdout metrics whose ``"score"`` entry drives stopping.
        """
        params = [p for net in nets for p in net.parameters()]
        opt = ad.Adam(params, lr=self.learning_rate)
        best = math.inf
        best_state = [net.state_dict() for net in nets]
        since_best = 0
        history = []
        n_batches = max(1, int(math.ceil(self.n_train_ / self.batch_size)))
        if self.min_batches_per_epoch:
            n_batches = max(n_batches, int(self.min_batches_per_epoch))
        if self.max_batches_per_epoch:
            n_batches = min(n_batches, int(self.max_batches_per_epoch))
        epoch = 0
        while True:
            epoch += 1
            total = 0.0
            for _ in range(n_batches):
                loss = train_batch(rng)
                grads = ad.backward(loss, params)
                opt.step(grads)
                total += loss.item()
            metrics = holdout_eval()
            metrics["epoch"] = epoch
            metrics["train_loss"] = total / n_batches
            history.append(metrics)
            score = metrics["score"]
            if not np.isfinite(score):
                raise TrainingError(f"non-finite holdout score at epoch {epoch}")
            if not np.isfinite(best) or score < best - 1e-3 * max(1.0, abs(best)):
                best = score
                best_state = [net.state_dict() for net in nets]
                since_best = 0
            else:
                since_best += 1
            if since_best >= self.patience:
                break
            if self.max_epochs is not None and epoch >= self.max_epochs:
                break
        for net, state in zip(nets, best_state):
            net.load_state_dict(state)
        return {"epochs": epoch, "best_score": best, "history": history}

    # -- checkpointing
    def _sidecar(self) -> dict:
        return {
            "kind": self._model_kind,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "state_dim": self.state_dim_,
            "action_dim": self.action_dim_,
            "state_norm": self.state_norm_.to_dict(),
            "action_norm": self.action_norm_.to_dict(),
            "reward_norm": self.reward_norm_.to_dict(),
            "delta_parameterization": True,
        }

    def save(self, path) -> None:
        """Write ``path`` (binary parameters) and ``path + '.json'`` (metadata)."""
        ad.save_params(path, self._named_state())
        with open(str(path) + ".json", "w") as fh:
            json.dump(self._sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        if meta.get("kind") != cls._model_kind:
            raise ConfigurationError(f"{path} holds a {meta.get('kind')!r} model, not {cls._model_kind!r}")
        params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["params"].items()}
        est = cls(**params)
        est.state_dim_ = meta["state_dim"]
        est.action_dim_ = meta["action_dim"]
        est.state_norm_ = Normalizer.from_dict(meta["state_norm"])
        est.action_norm_ = Normalizer.from_dict(meta["action_norm"])
        est.reward_norm_ = Normalizer.from_dict(meta["reward_norm"])
        est._build(np.random.default_rng(0))
        est._load_named_state(ad.load_params(path))
        return est
