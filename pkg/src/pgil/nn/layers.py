"""Parameterized layers and a minimal module tree.

Parameters are ``Tensor`` leaves with ``requires_grad=True``; batchnorm
running statistics are plain arrays exposed as buffers. ``state_dict`` flattens
both into dotted names so checkpoints can be written as blobs.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    training: bool = True

    def children(self):
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield f"{name}.{i}", m
            elif isinstance(v, dict):
                for k in sorted(v):
                    if isinstance(v[k], Module):
                        yield f"{name}.{k}", v[k]

    def _own_params(self):
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor) and v.requires_grad}

    def _own_buffers(self):
        return {}

    def parameters(self, prefix: str = "") -> dict:
        out = {prefix + k: v for k, v in sorted(self._own_params().items())}
        for name, m in self.children():
            out.update(m.parameters(f"{prefix}{name}."))
        return out

    def buffers(self, prefix: str = "") -> dict:
        out = {prefix + k: v for k, v in sorted(self._own_buffers().items())}
        for name, m in self.children():
            out.update(m.buffers(f"{prefix}{name}."))
        return out

    def train(self, mode: bool = True):
        self.training = mode
        for _, m in self.children():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict:
        sd = {"param." + k: v.data.copy() for k, v in self.parameters().items()}
        sd.update({"buffer." + k: v.copy() for k, v in self.buffers().items()})
        return sd

    def load_state_dict(self, sd: dict):
        params, bufs = self.parameters(), self.buffers()
        expected = {"param." + k for k in params} | {"buffer." + k for k in bufs}
        if set(sd) != expected:
            missing = sorted(expected - set(sd))[:5]
            extra = sorted(set(sd) - expected)[:5]
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, p in params.items():
            v = np.asarray(sd["param." + k], dtype=np.float64)
            if v.shape != p.shape:
                raise T.ShapeError("load_state_dict", p.shape, v.shape, detail=k)
            p.data = v.copy()
        for k, b in bufs.items():
            b[...] = sd["buffer." + k]

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))


def _uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=False, gain=np.sqrt(2.0)):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k * k
        self.weight = _uniform(rng, (c_out, c_in, k, k), fan_in, gain)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5, zero_init=False):
        self.gamma = Tensor(np.zeros(c) if zero_init else np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum, self.eps = momentum, eps

    def _own_buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, gain=1.0):
        self.weight = _uniform(rng, (n_out, n_in), n_in, gain)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class BasicBlock(Module):
    """Two 3x3 conv-BN pairs with an identity or 1x1 projection shortcut."""

    def __init__(self, c_in, c_out, stride, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.bn2 = BatchNorm2d(c_out, zero_init=True)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0)
            self.proj_bn = BatchNorm2d(c_out)
        else:
            self.proj = self.proj_bn = None

    def __call__(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        sc = x if self.proj is None else self.proj_bn(self.proj(x))
        return T.relu(T.add(h, sc))


class Stage(Module):
    def __init__(self, c_in, c_out, n_blocks, stride, rng):
        self.blocks = [BasicBlock(c_in if i == 0 else c_out, c_out, stride if i == 0 else 1, rng)
                       for i in range(n_blocks)]

    def __call__(self, x):
        for b in self.blocks:
            x = b(x)
        return x
