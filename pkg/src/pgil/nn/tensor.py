"""Dense tensors with a reverse-mode compute graph.

Every op records its inputs and a closure that maps the output gradient to
input gradients. ``Tensor.backward`` walks the graph in reverse topological
order and accumulates into ``.grad`` of every tensor that requires it.
Tensors are NCHW for images and ``(N, features)`` for vectors.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes, detail: str = ""):
        shp = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shp}" + (f" ({detail})" if detail else ""))
        self.op = op
        self.shapes = shapes


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=DTYPE)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None if node is not self else node.grad


def _accum(t: Tensor, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward, op) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)

    def back(g):
        _accum(a, g)
        _accum(b, g)
    return _result(a.data + b.data, (a, b), back, "add")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        _accum(a, g * c)
    return _result(a.data * c, (a,), back, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        _accum(x, np.where(mask, g, 0.0))
    # NaN must survive so that diverged training is detected downstream
    return _result(np.where(mask | np.isnan(x.data), x.data, 0.0), (x,), back, "relu")


# ----------------------------------------------------------------- convolution

def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` (N, C, H, W) with ``w`` (O, C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape, detail="expected (N,C,H,W) and (O,C,kh,kw)")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, detail="bias must have one entry per output channel")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    s, p = stride, padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    xp = _pad(x.data, p)
    # channel-major columns (C, kh, kw, N, Ho, Wo) keep the matmul operands contiguous
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s].transpose(1, 0, 2, 3)
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    w2 = w.data.reshape(o, -1)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
        if w.requires_grad:
            _accum(w, (g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros(xp.shape, dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j].transpose(1, 0, 2, 3)
            _accum(x, dxp[:, :, p:p + h, p:p + wd] if p else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _result(np.ascontiguousarray(out), parents, back, "conv2d")


# ----------------------------------------------------------------- normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); otherwise the running buffers are used.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm", x.shape, gamma.shape, beta.shape)
    axes = (0, 2, 3)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def back(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                mean_d = dxhat.mean(axis=axes, keepdims=True)
                mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
                dx = (dxhat - mean_d - xhat * mean_dx) * inv[None, :, None, None]
            else:
                dx = dxhat * inv[None, :, None, None]
            _accum(x, dx)

    return _result(out, (x, gamma, beta), back, "batch_norm")


# ----------------------------------------------------------------- pooling / resampling

def _check_pool(op, x, k):
    if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
        raise ShapeError(op, x.shape, detail=f"spatial dims must be divisible by {k}")


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping ``k x k`` max pooling (first maximum wins ties)."""
    _check_pool("max_pool2d", x, k)
    n, c, h, w = x.shape
    blocks = x.data.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        d = np.zeros_like(blocks)
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, d)
    return _result(out, (x,), back, "max_pool2d")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    _check_pool("avg_pool2d", x, k)
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def back(g):
        _accum(x, np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k))
    return _result(out, (x,), back, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape)
    n, c, h, w = x.shape

    def back(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy())
    return _result(x.data.mean(axis=(2, 3)), (x,), back, "global_avg_pool")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("upsample_nearest", x.shape)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        _accum(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))
    return _result(out, (x,), back, "upsample_nearest")


# ----------------------------------------------------------------- dense / losses

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("linear", w.shape, b.shape)
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def back(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        if b is not None:
            _accum(b, g.sum(axis=0))
    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, back, "linear")


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of (N, K) scores, log-sum-exp stabilized."""
    if x.ndim != 2:
        raise ShapeError("log_softmax", x.shape)
    mx = x.data.max(axis=1, keepdims=True)
    z = x.data - mx
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def back(g):
        _accum(x, g - sm * g.sum(axis=1, keepdims=True))
    return _result(out, (x,), back, "log_softmax")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(weights * x)`` for constant ``weights``."""
    wts = np.asarray(weights, dtype=DTYPE)
    if wts.shape != x.shape:
        raise ShapeError("weighted_sum", x.shape, wts.shape)

    def back(g):
        _accum(x, g * wts)
    return _result(np.sum(wts * x.data), (x,), back, "weighted_sum")
