"""Parameterised layers built on :mod:`xmodal4d.autodiff`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameter container; attributes are walked in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = ad.parameter((d_in, d_out), d_in, rng)
        self.bias = ad.parameter((d_out,), d_in, rng) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x if x.ndim == 2 else x.reshape(-1, x.shape[-1])
        y = ad.matmul(flat, self.weight)
        if self.bias is not None:
            y = ad.add_bias(y, self.bias)
        return y if x.ndim == 2 else y.reshape(*lead, y.shape[-1])


class MLP(Module):
    """Two linear layers with a ReLU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator, final_relu: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        y = self.fc2(ad.relu(self.fc1(x)))
        return ad.relu(y) if self.final_relu else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, pad: int | None = None):
        fan_in = c_in * k * k
        self.weight = ad.parameter((c_out, c_in, k, k), fan_in, rng)
        self.bias = ad.parameter((c_out,), fan_in, rng)
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=1, pad=self.pad)


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None = None) -> Tensor:
    scale = 1.0 / np.sqrt(q.shape[-1])
    return ad.softmax(ad.mul_scalar(ad.matmul(q, ad.transpose(k)), scale), axis=-1, mask=mask)


def row_groups(mask: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition rows by identical mask pattern, in order of first appearance.

    Returns ``(rows, allowed_columns)`` pairs.
    """
    mask = np.asarray(mask, dtype=bool)
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(mask):
        if not row.any():
            raise ValueError(f"attention mask row {i} has no allowed columns")
        groups.setdefault(row.tobytes(), []).append(i)
    return [(np.array(rows), np.nonzero(mask[rows[0]])[0]) for rows in groups.values()]


class AttentionLayer(Module):
    """Single-head pre-norm transformer layer.

    ``x`` supplies the queries; keys and values come from ``context`` when
    given (cross-attention) and from ``x`` otherwise. A boolean ``mask`` over
    (query, key) pairs restricts self-attention; see :meth:`_masked`.
    """

    def __init__(self, d: int, rng: np.random.Generator, cross: bool = False, ffn_mult: int = 2):
        self.ln_q = LayerNorm(d)
        self.ln_kv = LayerNorm(d) if cross else None
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln_ff = LayerNorm(d)
        self.ffn = MLP(d, ffn_mult * d, d, rng)
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor, context: Tensor | None = None, mask: np.ndarray | None = None) -> Tensor:
        if mask is not None:
            if context is not None:
                raise ValueError("masked attention is self-attention only")
            return self._masked(x, mask)
        h = self.ln_q(x)
        c = h if context is None else self.ln_kv(context)
        a = attention_weights(self.wq(h), self.wk(c))
        self.last_attention = a.data
        x = x + self.wo(ad.matmul(a, self.wv(c)))
        return x + self.ffn(self.ln_ff(x))

    def _masked(self, x: Tensor, mask: np.ndarray) -> Tensor:
        # Rows sharing a mask pattern are processed as one block and attend
        # only to their allowed columns. A block's arithmetic then depends on
        # nothing but its own rows and allowed columns, so a sub-sequence run
        # on its own reproduces it bit for bit.
        mask = np.asarray(mask, dtype=bool)
        n = x.shape[0]
        if mask.shape != (n, n):
            raise ad.ShapeError(f"attention mask {mask.shape} does not match {n} tokens")
        groups = row_groups(mask)
        order = np.concatenate([rows for rows, _ in groups])
        position = np.empty(n, dtype=np.int64)
        position[order] = np.arange(n)

        blocks, queries, keys, values = [], [], [], []
        for rows, _ in groups:
            xb = ad.embedding_lookup(x, rows)
            h = self.ln_q(xb)
            blocks.append(xb)
            queries.append(self.wq(h))
            keys.append(self.wk(h))
            values.append(self.wv(h))
        k_all = ad.concat(keys, axis=0) if len(keys) > 1 else keys[0]
        v_all = ad.concat(values, axis=0) if len(values) > 1 else values[0]

        outs = []
        attn = np.zeros((n, n))
        for (rows, cols), xb, q in zip(groups, blocks, queries):
            a = attention_weights(q, ad.embedding_lookup(k_all, position[cols]))
            attn[np.ix_(rows, cols)] = a.data
            y = xb + self.wo(ad.matmul(a, ad.embedding_lookup(v_all, position[cols])))
            outs.append(y + self.ffn(self.ln_ff(y)))
        self.last_attention = attn
        out = ad.concat(outs, axis=0) if len(outs) > 1 else outs[0]
        return ad.embedding_lookup(out, position)


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: d // 2])
    return pe
