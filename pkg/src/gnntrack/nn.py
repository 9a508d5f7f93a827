"""Multi-layer perceptrons on top of the autograd tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ad
from .errors import ConfigError

ACTIVATIONS = ("relu", "sigmoid", "none")


@dataclass
class Mlp:
    """Stack of affine layers ``x @ W + b`` each followed by its activation."""

    weights: list
    biases: list
    activations: list
    name: str = "mlp"
    _params: dict = field(default=None, repr=False)

    @classmethod
    def create(cls, sizes, activations, rng, name="mlp"):
        if len(activations) != len(sizes) - 1:
            raise ConfigError(f"{name}: need {len(sizes) - 1} activations, got {len(activations)}")
        weights, biases = [], []
        for k, (n_in, n_out, act) in enumerate(zip(sizes[:-1], sizes[1:], activations)):
            if act not in ACTIVATIONS:
                raise ConfigError(f"{name}: unknown activation {act!r}")
            if act == "relu":
                bound = np.sqrt(6.0 / n_in)  # Kaiming uniform
            else:
                bound = np.sqrt(6.0 / (n_in + n_out))  # Xavier uniform
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            weights.append(ad.Tensor(w, requires_grad=True, name=f"{name}.W{k}"))
            biases.append(ad.Tensor(np.zeros((1, n_out)), requires_grad=True, name=f"{name}.b{k}"))
        return cls(weights, biases, list(activations), name)

    @classmethod
    def from_arrays(cls, weights, biases, activations, name="mlp"):
        ws = [ad.Tensor(np.asarray(w, float), requires_grad=True, name=f"{name}.W{k}")
              for k, w in enumerate(weights)]
        bs = [ad.Tensor(np.asarray(b, float).reshape(1, -1), requires_grad=True, name=f"{name}.b{k}")
              for k, b in enumerate(biases)]
        return cls(ws, bs, list(activations), name)

    @classmethod
    def identity(cls, dim, name="identity"):
        return cls.from_arrays([np.eye(dim)], [np.zeros(dim)], ["none"], name)

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        if self._params is None:
            self._params = {}
            for k, (w, b) in enumerate(zip(self.weights, self.biases)):
                self._params[f"{self.name}.W{k}"] = w
                self._params[f"{self.name}.b{k}"] = b
        return self._params

    def __call__(self, x, pre_activation=False):
        return mlp_forward(self, x, pre_activation=pre_activation)


def mlp_forward(params: Mlp, x, pre_activation=False):
    """Apply the MLP row-wise; ``pre_activation`` skips the last activation."""
    h = ad.as_tensor(x)
    last = len(params.weights) - 1
    for k, (w, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        if h.shape[-1] != w.shape[0]:
            raise ConfigError(
                f"{params.name} layer {k}: expected input width {w.shape[0]}, got {h.shape[-1]}")
        h = h @ w + b
        if pre_activation and k == last:
            break
        if act == "relu":
            h = ad.relu(h)
        elif act == "sigmoid":
            h = ad.sigmoid(h)
    return h


def collect(*modules):
    """Merge parameter dicts of several MLPs (names must be unique)."""
    out = {}
    for m in modules:
        for k, v in m.parameters().items():
            if k in out:
                raise ConfigError(f"duplicate parameter name {k}")
            out[k] = v
    return out
