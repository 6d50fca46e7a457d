"""Independent oracles shared by the test modules."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from pgil.nn.tensor import Tensor


def numeric_grad(f, arrays, index, h=1e-6):
    """Central finite difference of scalar ``f(*arrays)`` with respect to ``arrays[index]``."""
    x = arrays[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(*arrays)
        x[i] = old - h
        fm = f(*arrays)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_check(build, arrays, wrt=None, h=1e-6, probe_seed=0):
    """Max relative error between analytic and numeric gradients.

    ``build(*tensors)`` returns a Tensor; the scalar checked is its inner
    product with a fixed random probe, so non-scalar ops are covered too.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    probe = np.random.default_rng(probe_seed).standard_normal(out_shape)

    def scalar(*arrs):
        return float(np.sum(build(*[Tensor(a) for a in arrs]).data * probe))

    ts = [Tensor(a.copy(), requires_grad=i in wrt) for i, a in enumerate(arrays)]
    out = build(*ts)
    out.backward(probe)
    worst = 0.0
    for i in wrt:
        num = numeric_grad(scalar, arrays, i, h)
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(num)
        denom = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
        worst = max(worst, float(np.max(np.abs(num - ana)) / denom))
    return worst


def best_permutation_tv(true_rows, est_rows):
    """Max total-variation distance after optimal one-to-one row matching."""
    tv = 0.5 * np.abs(true_rows[:, None, :] - est_rows[None, :, :]).sum(-1)
    r, c = linear_sum_assignment(tv)
    return float(tv[r, c].max())


def matched_agreement(truth, labels):
    """Agreement after one-to-one matching of label ids to truth ids."""
    t_ids, t = np.unique(truth, return_inverse=True)
    l_ids, l = np.unique(labels, return_inverse=True)
    m = np.zeros((l_ids.size, t_ids.size))
    np.add.at(m, (l, t), 1)
    r, c = linear_sum_assignment(-m)
    return m[r, c].sum() / truth.size


def majority_agreement(truth, labels):
    """Agreement after mapping each label to its majority truth id (many-to-one)."""
    hit = 0
    for lab in np.unique(labels):
        sel = labels == lab
        hit += np.bincount(truth[sel]).max()
    return hit / truth.size


def gradient_cases(seed=0):
    """``(name, build, arrays, wrt)`` covering every differentiable op and both losses."""
    from pgil.nn import tensor as T
    from pgil.nn.losses import cross_entropy, pgn_loss, pin_loss

    r = np.random.default_rng(seed)
    n = r.standard_normal
    cases = []

    def bn(training):
        def build(x, g, b):
            c = x.shape[1]
            return T.batch_norm(x, g, b, np.zeros(c), np.ones(c), training)
        return build

    for shape in [(3, 4), (2, 5, 3)]:
        cases.append((f"add{shape}", T.add, [n(shape), n(shape)], None))
    cases.append(("scale", lambda a: T.scale(a, -1.7), [n((4, 3))], None))
    for shape in [(2, 3, 4, 4), (5, 7)]:
        x = n(shape)
        x[np.abs(x) < 1e-3] = 0.5
        cases.append((f"relu{shape}", T.relu, [x], None))
    for (N, C, H, W, O, k, s, p) in [(2, 3, 5, 5, 4, 3, 1, 1), (1, 2, 6, 6, 3, 3, 2, 1),
                                     (2, 2, 4, 4, 2, 1, 1, 0), (1, 3, 7, 5, 2, 3, 2, 0),
                                     (2, 1, 8, 8, 2, 5, 1, 2)]:
        cases.append((f"conv2d{(N, C, H, W, O, k, s, p)}",
                      lambda x, w, b, s=s, p=p: T.conv2d(x, w, b, stride=s, padding=p),
                      [n((N, C, H, W)), n((O, C, k, k)), n(O)], None))
    cases.append(("conv2d-nobias", lambda x, w: T.conv2d(x, w, None, 1, 1),
                  [n((2, 2, 4, 4)), n((3, 2, 3, 3))], None))
    for shape in [(4, 3, 2, 2), (3, 2, 4, 4)]:
        cases.append((f"batchnorm-train{shape}", bn(True),
                      [n(shape), 1 + 0.1 * n(shape[1]), n(shape[1])], None))
    cases.append(("batchnorm-eval", bn(False), [n((2, 3, 3, 3)), n(3), n(3)], None))
    for shape, k in [((2, 3, 4, 4), 2), ((1, 2, 6, 6), 3)]:
        cases.append((f"maxpool{shape}", lambda x, k=k: T.max_pool2d(x, k), [n(shape)], None))
        cases.append((f"avgpool{shape}", lambda x, k=k: T.avg_pool2d(x, k), [n(shape)], None))
    cases.append(("gap", T.global_avg_pool, [n((3, 4, 5, 2))], None))
    for shape, f in [((2, 3, 2, 2), 2), ((1, 2, 3, 2), 3)]:
        cases.append((f"upsample{shape}x{f}", lambda x, f=f: T.upsample_nearest(x, f), [n(shape)], None))
    for N, I, O in [(4, 5, 3), (1, 8, 2)]:
        cases.append((f"linear{(N, I, O)}", T.linear, [n((N, I)), n((O, I)), n(O)], None))
    for shape in [(3, 6), (1, 4)]:
        cases.append((f"log_softmax{shape}", T.log_softmax, [3 * n(shape)], None))
    cases.append(("weighted_sum", lambda x: T.weighted_sum(x, np.arange(12.0).reshape(3, 4)),
                  [n((3, 4))], None))

    def bot(shape):
        return r.dirichlet(np.full(shape[1], 0.5), size=shape[0])

    for constraint in ("soft", "hard"):
        for shape in [(4, 6), (2, 10)]:
            y = bot(shape)
            d = (r.random(shape) < 0.6).astype(float)
            cases.append((f"pgn_loss-{constraint}{shape}",
                          lambda phi, y=y, d=d, c=constraint: pgn_loss(y, phi, d, c), [2 * n(shape)], None))
    labels = r.integers(0, 5, size=6)
    cases.append(("cross_entropy", lambda s: cross_entropy(s, labels), [n((6, 5))], None))
    y, d = bot((6, 4)), np.ones((6, 4))
    cases.append(("pin_loss", lambda s, phi: pin_loss(s, labels, phi, y, d, lam=0.1),
                  [n((6, 5)), n((6, 4))], None))
    return cases
