"""Parameter containers. Weights use uniform fan-in init, biases start at zero."""

import math

import numpy as np

from . import functional as F
from .tensor import Tensor, default_dtype


class Module:
    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self):
        return dict(self.named_parameters())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def requires_grad_(self, flag=True):
        for p in self.parameters().values():
            p.requires_grad = flag
            if not flag:
                p.grad = None
        return self

    def freeze(self):
        return self.requires_grad_(False)

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(default_dtype()), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = _uniform(rng, (d_in, d_out), d_in)
        self.bias = _zeros((d_out,)) if bias else None

    def forward(self, x):
        y = F.matmul(x, self.weight)
        return y if self.bias is None else F.add(y, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, pad=None, bias=True):
        self.weight = _uniform(rng, (c_out, c_in, k, k), c_in * k * k)
        self.bias = _zeros((c_out,)) if bias else None
        self._stride = stride
        self._pad = k // 2 if pad is None else pad

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self._stride, pad=self._pad)


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = Tensor(np.ones(d, dtype=default_dtype()), requires_grad=True)
        self.beta = _zeros((d,))

    def forward(self, x):
        return F.layernorm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, rng, n, d, init_scale=0.02):
        self.table = Tensor(rng.normal(0.0, init_scale, size=(n, d)).astype(default_dtype()), requires_grad=True)

    def forward(self, ids):
        return F.embedding_lookup(self.table, ids)
