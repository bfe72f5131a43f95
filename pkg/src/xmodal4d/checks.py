"""Finite-difference gradient checks over every differentiable op and loss.

Inputs are drawn away from the non-differentiable points of relu/max so a
central difference with ``h = 1e-5`` stays on one side of every kink.
"""

from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .nn import AttentionLayer

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    mag = 0.1 + rng.random(shape)
    return Tensor(np.where(rng.random(shape) < 0.5, -mag, mag), requires_grad=True)


def _distinct(rng, *shape) -> Tensor:
    """Values with pairwise gaps >= 0.05 so max/argmax is stable under perturbation."""
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, n)
    return Tensor(vals.reshape(shape) - vals.mean(), requires_grad=True)


def _weights(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _reduce(y: Tensor, w: Tensor) -> Tensor:
    """Random linear functional so every output entry matters."""
    return ad.sum_(ad.mul(y, w))


def _unary(op) -> Case:
    def case(rng):
        x = _param(rng, 3, 4)
        w = _weights(rng, (3, 4))
        return (lambda: _reduce(op(x), w)), [x]

    return case


def _case_log(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    w = _weights(rng, (3, 4))
    return (lambda: _reduce(ad.log(x), w)), [x]


def _case_relu(rng):
    x = _away_from_zero(rng, 3, 5)
    w = _weights(rng, (3, 5))
    return (lambda: _reduce(ad.relu(x), w)), [x]


def _binary(op) -> Case:
    def case(rng):
        a, b = _param(rng, 3, 4), _param(rng, 3, 4)
        w = _weights(rng, (3, 4))
        return (lambda: _reduce(op(a, b), w)), [a, b]

    return case


def _case_add_bias(rng):
    x, b = _param(rng, 2, 3, 4), _param(rng, 4)
    w = _weights(rng, (2, 3, 4))
    return (lambda: _reduce(ad.add_bias(x, b), w)), [x, b]


def _case_sum(rng):
    x = _param(rng, 2, 3, 4)
    w = _weights(rng, (2, 4))
    return (lambda: _reduce(ad.sum_(x, axis=1), w) + ad.mul_scalar(ad.sum_(x), 0.3)), [x]


def _case_mean(rng):
    x = _param(rng, 2, 3, 4)
    w = _weights(rng, (2,))
    return (lambda: _reduce(ad.mean(x, axis=(1, 2)), w) + ad.mean(x)), [x]


def _case_max(rng):
    x = _distinct(rng, 3, 4, 2)
    w = _weights(rng, (3, 2))
    return (lambda: _reduce(ad.max_(x, axis=1), w)), [x]


def _case_softmax(rng):
    x = _param(rng, 4, 5)
    mask = rng.random((4, 5)) < 0.7
    mask[:, 0] = True
    w = _weights(rng, (4, 5))
    return (lambda: _reduce(ad.softmax(x, axis=1, mask=mask), w) + _reduce(ad.softmax(x, axis=0), w)), [x]


def _case_l2(rng):
    x = _param(rng, 4, 3)
    w = _weights(rng, (4, 3))
    return (lambda: _reduce(ad.l2_normalize(x, axis=1), w)), [x]


def _case_layer_norm(rng):
    x, g, b = _param(rng, 3, 5), _param(rng, 5), _param(rng, 5)
    w = _weights(rng, (3, 5))
    return (lambda: _reduce(ad.layer_norm(x, g, b), w)), [x, g, b]


def _case_standardize(rng):
    x = _param(rng, 6, 3)
    w = _weights(rng, (6, 3))
    return (lambda: _reduce(ad.standardize(x, axis=0), w)), [x]


def _case_cross_entropy(rng):
    x = _param(rng, 5, 4)
    labels = rng.integers(0, 4, 5)
    labels[1] = -1
    return (lambda: ad.cross_entropy(x, labels, ignore_index=-1)), [x]


def _case_matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    w = _weights(rng, (3, 2))
    return (lambda: _reduce(ad.matmul(a, b), w)), [a, b]


def _case_structure(rng):
    a, b = _param(rng, 2, 3), _param(rng, 2, 3)
    w = _weights(rng, (3, 4))
    w2 = _weights(rng, (6,))

    def fn():
        cat = ad.concat([a, b], axis=0)  # 4 x 3
        y = ad.transpose(cat)  # 3 x 4
        return _reduce(y, w) + _reduce(ad.reshape(a, (6,)), w2) + ad.sum_(ad.getitem(cat, (slice(1, 3), [0, 2, 2])))

    return fn, [a, b]


def _case_embedding(rng):
    table = _param(rng, 4, 3)
    idx = np.array([[0, 2, 2], [3, 1, 0]])
    w = _weights(rng, (2, 3, 3))
    return (lambda: _reduce(ad.embedding_lookup(table, idx), w)), [table]


def _case_conv(rng):
    x, k, b = _param(rng, 2, 2, 5, 5), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    w = _weights(rng, (2, 3, 5, 5))
    return (lambda: _reduce(ad.conv2d(x, k, b, pad=1), w)), [x, k, b]


def _case_maxpool(rng):
    x = _distinct(rng, 1, 2, 4, 4)
    w = _weights(rng, (1, 2, 2, 2))
    return (lambda: _reduce(ad.maxpool2d(x, 2), w)), [x]


def _case_attention(rng):
    layer = AttentionLayer(4, rng)
    for p in layer.parameters():
        p.data = p.data + rng.normal(0, 0.05, p.shape)
    x = _param(rng, 5, 4)
    mask = np.ones((5, 5), dtype=bool)
    mask[:3, 3:] = False
    w = _weights(rng, (5, 4))
    return (lambda: _reduce(layer(x, mask=mask), w)), [x, layer.wq.weight, layer.wo.weight]


def _feats(rng, t=5, d=3):
    return _param(rng, t, d)


def _case_tcont(rng):
    f = _feats(rng, 6, 3)
    labels = np.array([0, 0, 1, 0, 0, 1])
    return (lambda: L.temporal_contrastive(f, labels, 0.5)), [f]


def _case_adv(rng):
    a, b = _feats(rng), _feats(rng)
    return (lambda: L.consistency_adv(a, b, 0.5)), [a, b]


def _case_lag(rng):
    a, b = _feats(rng), _feats(rng)
    return (lambda: L.consistency_lag(a, b, 0.5)), [a, b]


def _case_tac(rng):
    a, b = _feats(rng), _feats(rng)
    return (lambda: L.tac(a, b, 0.07)), [a, b]


def _case_tac_cross(rng):
    a, b = _feats(rng), _feats(rng)
    return (lambda: L.tac(a, b, 0.07, reading="cross")), [a, b]


def _case_task(mode: str) -> Case:
    def case(rng):
        x = _param(rng, 5, 3)
        labels = rng.integers(0, 3, 5)
        if mode == "video":
            labels = np.array(labels[0])
        elif mode == "point":
            labels[2] = -1
        return (lambda: L.task_loss(x, labels, -1, mode=mode)), [x]

    return case


def _case_total(rng):
    parts = [Tensor(rng.normal(), requires_grad=True) for _ in range(4)]
    return (lambda: L.total_loss(*parts, omega=0.3)), parts


def _case_distill(mode: str) -> Case:
    def case(rng):
        a, b = _feats(rng, 4, 3), _feats(rng, 4, 3)
        return (lambda: L.distill_loss(mode, a, b)), [a, b]

    return case


CASES: dict[str, Case] = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "mul_scalar": _unary(lambda x: ad.mul_scalar(x, -1.7)),
    "add_bias": _case_add_bias,
    "relu": _case_relu,
    "exp": _unary(ad.exp),
    "log": _case_log,
    "sum": _case_sum,
    "mean": _case_mean,
    "max": _case_max,
    "softmax": _case_softmax,
    "l2_normalize": _case_l2,
    "layer_norm": _case_layer_norm,
    "standardize": _case_standardize,
    "cross_entropy": _case_cross_entropy,
    "matmul": _case_matmul,
    "concat_transpose_reshape_getitem": _case_structure,
    "embedding_lookup": _case_embedding,
    "conv2d": _case_conv,
    "maxpool2d": _case_maxpool,
    "attention_layer": _case_attention,
    "temporal_contrastive": _case_tcont,
    "consistency_adv": _case_adv,
    "consistency_lag": _case_lag,
    "tac": _case_tac,
    "tac_cross": _case_tac_cross,
    "task_loss_frame": _case_task("frame"),
    "task_loss_point": _case_task("point"),
    "task_loss_video": _case_task("video"),
    "total_loss": _case_total,
    "distill_l2": _case_distill("l2"),
    "distill_kl": _case_distill("kl"),
    "distill_cosine": _case_distill("cosine"),
}


def run_gradchecks(seeds=range(10), names=None, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error per case over ``seeds``."""
    out = {}
    for name in names or CASES:
        worst = 0.0
        for seed in seeds:
            fn, inputs = CASES[name](np.random.default_rng([seed, zlib.crc32(name.encode())]))
            worst = max(worst, ad.gradcheck(fn, inputs, h))
        out[name] = worst
    return out
