"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable op is a plain function returning a new :class:`Tensor`
that remembers its parents and a closure mapping the output gradient to the
input gradients. :func:`backward` replays the reachable nodes in reverse
creation order, which is a valid topological order because a node can only be
created after its inputs.

Broadcasting is deliberately absent: apart from ``tensor * python_float`` and
the explicit :func:`add_bias`, operand shapes must match exactly.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()
_grad_enabled = True
_scope_stack: list[str] = []
_alloc_counts: Counter = Counter()


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


def _shape_error(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes))


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def scope(name: str):
    """Tag every tensor allocated inside the block with ``name``.

    Allocation counts per tag are exposed through :func:`allocation_counts`;
    the trainer uses this to prove the deployment path never touches the
    image branch.
    """
    _scope_stack.append(name)
    try:
        yield
    finally:
        _scope_stack.pop()


def allocation_counts() -> dict[str, int]:
    return dict(_alloc_counts)


def reset_allocation_counts() -> None:
    _alloc_counts.clear()


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str | None = None, _copy: bool = True):
        arr = np.array(data, dtype=DTYPE) if _copy else data
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.id = next(_ids)
        for tag in _scope_stack:
            _alloc_counts[tag] += 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # operator sugar; every form maps onto an explicit op below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __truediv__(self, other):
        return mul_scalar(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> Tensor:
        return sum_(self, axis)

    def mean(self, axis=None) -> Tensor:
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(shape: Sequence[int], fan_in: int, rng: np.random.Generator, name: str | None = None) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    # op results are fresh arrays (or views of graph values nobody mutates), so skip the defensive copy
    Tensor.__init__(out, np.asarray(data, dtype=DTYPE), _copy=False)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add")
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul_elementwise", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul_elementwise")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b`` has shape ``(D,)`` and ``x`` ends in ``D``."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise _shape_error("add_bias", x.shape, b.shape)
    lead = tuple(range(x.ndim - 1))
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


# ----------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    shape = x.shape

    def back(g):
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.data, axis=ax), (x,), back, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    count = x.size if ax is None else int(np.prod([x.shape[a] for a in ax]))
    shape = x.shape

    def back(g):
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.mean(x.data, axis=ax), (x,), back, "mean")


def max_(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), back, "max")


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max-subtraction.

    ``mask`` (boolean, same shape) marks allowed entries; disallowed entries
    act as ``-inf`` logits and come out as exact zeros.
    """
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise _shape_error("softmax(mask)", x.shape, mask.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a row has no allowed entries")
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), back, "softmax")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Unit-normalize along ``axis``; all-zero slices map to zero (gradient 0)."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)
    y = np.where(norm > 0, x.data / safe, 0.0)

    def back(g):
        gx = (g - y * np.sum(g * y, axis=axis, keepdims=True)) / safe
        return (np.where(norm > 0, gx, 0.0),)

    return _make(y, (x,), back, "l2_normalize")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def back(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back, "layer_norm")


def standardize(x: Tensor, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance along ``axis`` (no affine part)."""
    ax = _norm_axis(axis, x.ndim)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        return (inv * (g - g.mean(axis=ax, keepdims=True) - xhat * (g * xhat).mean(axis=ax, keepdims=True)),)

    return _make(xhat, (x,), back, "standardize")


def cross_entropy(logits: Tensor, labels, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over rows whose label is not ignored.

    Returns an exact zero when every row is ignored.
    """
    if logits.ndim != 2:
        raise _shape_error("cross_entropy", logits.shape)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:1]:
        raise _shape_error("cross_entropy", logits.shape, labels.shape)
    valid = np.ones(labels.shape, bool) if ignore_index is None else labels != ignore_index
    n = int(valid.sum())
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.nonzero(valid)[0]
    loss = -logp[rows, labels[rows]].sum() / n if n else 0.0

    def back(g):
        gx = np.zeros(logits.shape)
        if n:
            p = np.exp(logp[rows])
            p[np.arange(len(rows)), labels[rows]] -= 1.0
            gx[rows] = p * (g / n)
        return (gx,)

    return _make(np.asarray(loss), (logits,), back, "cross_entropy")


# ------------------------------------------------------------------ structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise _shape_error("reshape", old, tuple(shape)) from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: no inputs")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise _shape_error(f"concat(axis={axis})", tensors[0].shape, t.shape)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def getitem(x: Tensor, index) -> Tensor:
    """Slicing; integer-array indices are supported and scatter-add on backward."""
    shape = x.shape
    out = x.data[index]

    def back(g):
        gx = np.zeros(shape)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(out), (x,), back, "slice")


def embedding_lookup(table: Tensor, idx) -> Tensor:
    """Rows of a 2-D ``table`` gathered by an integer array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise _shape_error("embedding_lookup", table.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: index out of range for table {table.shape}")
    shape = table.shape

    def back(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _make(table.data[idx], (table,), back, "embedding_lookup")


# -------------------------------------------------------------- convolutions


def _shifts(kh: int, kw: int):
    return [(i, j) for i in range(kh) for j in range(kw)]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW cross-correlation.

    Columns are assembled channel-last from one strided slice per kernel tap,
    which keeps every copy contiguous.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise _shape_error("conv2d(bias)", w.shape, b.shape)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise _shape_error("conv2d", x.shape, w.shape)
    xp = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kh * kw, c))
    for t, (i, j) in enumerate(_shifts(kh, kw)):
        cols[:, :, :, t, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gcols = (gm @ wmat).reshape(n, ho, wo, kh * kw, c)
        gxp = np.zeros(xp.shape)
        for t, (i, j) in enumerate(_shifts(kh, kw)):
            gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, t, :]
        gx = gxp[:, pad : pad + h, pad : pad + wd, :].transpose(0, 3, 1, 2)
        return (gx, gw) if b is None else (gx, gw, gm.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out), parents, back, "conv2d")


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % k or w % k:
        raise _shape_error(f"maxpool2d(k={k})", x.shape)
    ho, wo = h // k, w // k
    blocks = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = np.argmax(blocks, axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (gb.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _make(out, (x,), back, "maxpool2d")


# ------------------------------------------------------------------- backward


def _graph_nodes(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t.id, reverse=True)
    return nodes


def leaves(root: Tensor) -> list[Tensor]:
    """requires_grad leaves reachable from ``root`` (creation order)."""
    return sorted((t for t in _graph_nodes(root) if t.requires_grad and t._backward is None), key=lambda t: t.id)


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate ``.grad`` on every reachable leaf.

    Leaf gradients are overwritten, not accumulated. Tensors in ``params``
    that the loss does not reach receive an all-zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    for p in params:
        p.grad = np.zeros(p.shape)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    for node in _graph_nodes(loss):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients.

    For each input the error is ``max|analytic - numeric|`` divided by the
    larger of the two gradients' max-magnitudes (or 1e-12 when both vanish);
    the worst input is returned.
    """
    loss = fn()
    backward(loss, inputs)
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            num = np.zeros(t.shape)
            flat = t.data.reshape(-1)
            nflat = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
            scale = max(np.abs(ga).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
            worst = max(worst, float(np.abs(ga - num).max(initial=0.0) / scale))
    return worst


# ------------------------------------------------------------------ optimizer


@dataclass
class OptimizerState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> None:
    """In-place SGD: ``v = m*v + g + wd*p``; ``p -= lr*v``."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise _shape_error("sgd_step", p.shape, g.shape)
        v = state.velocity.get(i)
        if v is None:
            v = np.zeros(p.shape)
        v = state.momentum * v + g + state.weight_decay * p.data
        state.velocity[i] = v
        p.data -= state.lr * v


def warmup_lr(epoch: int, base_lr: float, warmup_epochs: int) -> float:
    """Linear warm-up over 1-indexed epochs, constant afterwards."""
    if warmup_epochs <= 0 or epoch >= warmup_epochs:
        return base_lr
    return base_lr * max(epoch, 1) / warmup_epochs


# ----------------------------------------------------------------- checkpoint

MAGIC = b"XM4DCKPT"
VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: str = "") -> None:
    """Write ``arrays`` (name -> float64 array) plus a text metadata block.

    Layout, all integers unsigned little-endian::

        magic[8] version:u32 meta_len:u32 meta[meta_len] count:u32
        count x (name_len:u32 name ndim:u32 dims:u64*ndim values:f64*prod(dims))
    """
    buf = bytearray(MAGIC)
    meta_b = meta.encode("utf-8")
    buf += struct.pack("<II", VERSION, len(meta_b)) + meta_b
    buf += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = raw[pos : pos + meta_len].decode("utf-8")
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).astype(DTYPE)
        pos += 8 * n
    return arrays, meta
