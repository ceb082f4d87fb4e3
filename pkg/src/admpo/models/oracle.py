from __future__ import annotations

import numpy as np

from ._base import GaussianPrediction


class TrueDynamicsModel:
    """Wraps an environment's exact dynamics behind the dynamics-model interface.

    Predictions have zero spread; useful as a perfect-model oracle in roll-outs
    and compounding-error checks.
    """

    def __init__(self, env, m: int = 1):
        self.env = env
        self.m = m
        self.state_dim_ = env.spec.state_dim
        self.action_dim_ = env.spec.action_dim
        self.state_scale = np.ones(self.state_dim_)

    def predict_gaussian(self, s_t, actions, k=None) -> GaussianPrediction:
        s_t = np.asarray(s_t, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if k is None:
            k = np.full(len(s_t), actions.shape[1])
        out_s = np.empty_like(s_t)
        out_r = np.empty(len(s_t))
        for i, (s, kk) in enumerate(zip(s_t, np.asarray(k))):
            for a in actions[i, :kk]:
                s, r = self.env.transition(s, np.clip(a, -1.0, 1.0))
            out_s[i], out_r[i] = s, r
        return GaussianPrediction(out_s, np.zeros_like(out_s), out_r, np.zeros_like(out_r))

    def predict(self, s_t, actions, k=None):
        return self.predict_gaussian(s_t, actions, k).mean_s
