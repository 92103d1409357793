"""Parameterized layers built on the autograd tensor.

Layers are thin containers of named parameter tensors plus a forward
method; collecting parameters for the optimizer or a checkpoint walks
the `parameters()` mapping.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .rng import RngStream
from .tensor import Tensor, concat, parameter


def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Dense:
    """Affine map with an optional elementwise activation."""

    def __init__(self, rng: RngStream, n_in: int, n_out: int, activation: str = "identity"):
        if activation not in ("identity", "relu", "tanh", "gelu", "sigmoid"):
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.weight = parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight + self.bias
        if self.activation == "relu":
            out = out.relu()
        elif self.activation == "tanh":
            out = out.tanh()
        elif self.activation == "gelu":
            out = out.gelu()
        elif self.activation == "sigmoid":
            out = out.sigmoid()
        return out

    def parameters(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class LSTM:
    """Single-layer LSTM over (batch, time, features) inputs.

    Gate order in the stacked weight matrices is input, forget, cell,
    output. A per-step mask keeps the previous state on padded steps so
    trailing pads cannot change the final state.
    """

    def __init__(self, rng: RngStream, n_in: int, n_hidden: int):
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.w_x = parameter(glorot_uniform(rng, n_in, 4 * n_hidden, (n_in, 4 * n_hidden)))
        self.w_h = parameter(glorot_uniform(rng, n_hidden, 4 * n_hidden, (n_hidden, 4 * n_hidden)))
        self.bias = parameter(np.zeros(4 * n_hidden))

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> Tuple[Tensor, Tensor]:
        n = self.n_hidden
        gates = x_t @ self.w_x + h_prev @ self.w_h + self.bias
        i = gates[:, 0 * n:1 * n].sigmoid()
        f = gates[:, 1 * n:2 * n].sigmoid()
        g = gates[:, 2 * n:3 * n].tanh()
        o = gates[:, 3 * n:4 * n].sigmoid()
        c_new = f * c_prev + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        """Run the full sequence; returns (all hidden states, final hidden).

        mask has shape (batch, time) with 1.0 on real steps, 0.0 on pads.
        """
        batch, steps, _ = x.shape
        h = Tensor(np.zeros((batch, self.n_hidden)))
        c = Tensor(np.zeros((batch, self.n_hidden)))
        outputs = []
        for t in range(steps):
            h_new, c_new = self.step(x[:, t, :], h, c)
            if mask is not None:
                m = Tensor(mask[:, t:t + 1].astype(np.float64))
                h = m * h_new + (1.0 - m) * h
                c = m * c_new + (1.0 - m) * c
            else:
                h, c = h_new, c_new
            outputs.append(h.reshape(batch, 1, self.n_hidden))
        return concat(outputs, axis=1), h

    def parameters(self) -> Dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}


def flatten_parameters(named: Dict[str, object]) -> Dict[str, Tensor]:
    """Flatten a nested {name: layer-or-tensor} tree into dotted names."""
    flat: Dict[str, Tensor] = {}
    for name, value in named.items():
        if isinstance(value, Tensor):
            flat[name] = value
        elif hasattr(value, "parameters"):
            for sub, tensor in value.parameters().items():
                flat[f"{name}.{sub}"] = tensor
        elif isinstance(value, dict):
            for sub, tensor in flatten_parameters(value).items():
                flat[f"{name}.{sub}"] = tensor
        else:
            raise TypeError(f"cannot collect parameters from {name}={value!r}")
    return flat
