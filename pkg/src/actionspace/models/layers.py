"""Small neural-network layers built on the autodiff tensors."""
from __future__ import annotations

import numpy as np

from ..numeric import tensor as ad
from ..numeric.tensor import Tensor


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, arrays: dict, strict: bool = True):
        params = self.parameters()
        missing = [k for k in params if k not in arrays]
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        loaded = []
        for k, p in params.items():
            if k in arrays and np.shape(arrays[k]) == p.shape:
                p.data[...] = arrays[k]
                loaded.append(k)
            elif strict:
                raise ValueError(f"shape mismatch for {k}: {np.shape(arrays.get(k))} vs {p.shape}")
        return loaded


def _uniform(rng, shape, bound):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _uniform(rng, (n_in, n_out), bound)
        self.bias = _uniform(rng, (n_out,), bound)

    def __call__(self, x):
        return x @ self.weight + self.bias


class MLP(Module):
    def __init__(self, sizes, rng, activation=ad.relu, out_activation=None):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self.out_activation = out_activation

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return self.out_activation(x) if self.out_activation else x


class GRUCell(Module):
    def __init__(self, n_in, hidden, rng):
        bound = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_in = _uniform(rng, (n_in, 3 * hidden), bound)
        self.w_hid = _uniform(rng, (hidden, 3 * hidden), bound)
        self.b_in = _uniform(rng, (3 * hidden,), bound)
        self.b_hid = _uniform(rng, (3 * hidden,), bound)

    def __call__(self, x, h):
        H = self.hidden
        gx = x @ self.w_in + self.b_in
        gh = h @ self.w_hid + self.b_hid
        r = ad.sigmoid(gx[..., :H] + gh[..., :H])
        z = ad.sigmoid(gx[..., H:2 * H] + gh[..., H:2 * H])
        n = ad.tanh(gx[..., 2 * H:] + r * gh[..., 2 * H:])
        return n + z * (h - n)


class GRU(Module):
    """Stacked GRU advanced one step at a time."""

    def __init__(self, n_in, hidden, layers, rng):
        self.hidden = hidden
        self.cells = [GRUCell(n_in if i == 0 else hidden, hidden, rng) for i in range(layers)]

    def initial_state(self, batch):
        return [Tensor._wrap(np.zeros((batch, self.hidden))) for _ in self.cells]

    def step(self, x, states):
        new = []
        for cell, h in zip(self.cells, states):
            x = cell(x, h)
            new.append(x)
        return x, new


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0):
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.weight = _uniform(rng, (c_out, c_in, kernel, kernel), bound)
        self.bias = _uniform(rng, (c_out,), bound)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
