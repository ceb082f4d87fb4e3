"""Parameter containers: linear layers, MLPs and a GRU cell."""
from __future__ import annotations

import copy
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base container; parameters and sub-modules are discovered by attribute order."""

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise T.ShapeError(f"parameter {name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def copy(self) -> "Module":
        return copy.deepcopy(self)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _param(_uniform(rng, (n_in, n_out), bound))
        self.bias = _param(_uniform(rng, (n_out,), bound))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


_ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid, "softplus": T.softplus}


class MLP(Module):
    """Fully connected stack; the activation is applied between layers only."""

    def __init__(self, sizes, rng: np.random.Generator, activation: str = "relu"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
        return x


class GRUCell(Module):
    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_hidden)
        self.hidden_size = n_hidden
        self.w_ih = _param(_uniform(rng, (n_in, 3 * n_hidden), bound))
        self.w_hh = _param(_uniform(rng, (n_hidden, 3 * n_hidden), bound))
        self.b_ih = _param(_uniform(rng, (3 * n_hidden,), bound))
        self.b_hh = _param(_uniform(rng, (3 * n_hidden,), bound))

    def __call__(self, x: Tensor, h: Tensor, mask=None) -> Tensor:
        return T.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh, mask=mask)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_size)))
