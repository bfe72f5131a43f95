"""Point backbone: per-frame anchors, spatio-temporal neighbourhood encoding,
temporal self-attention, and inverse-distance feature propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, AttentionLayer, Linear, Module


def farthest_point_sample(frame: np.ndarray, m: int) -> np.ndarray:
    """Greedy max-min subsampling starting at the point nearest the centroid.

    Ties resolve to the lowest index.
    """
    frame = np.asarray(frame, float)
    n = len(frame)
    if m > n:
        raise ValueError(f"cannot sample {m} anchors from {n} points")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    centroid = frame.mean(axis=0)
    start = int(np.argmin(((frame - centroid) ** 2).sum(axis=1)))
    chosen = [start]
    dist = ((frame - frame[start]) ** 2).sum(axis=1)
    dist[start] = -1.0
    for _ in range(m - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((frame - frame[nxt]) ** 2).sum(axis=1))
        dist[chosen] = -1.0
    return np.array(chosen, dtype=np.int64)


@dataclass
class AnchorSet:
    indices: np.ndarray  # T x M
    coordinates: np.ndarray  # T x M x 3


def _fps_batch(frames: np.ndarray, m: int) -> np.ndarray:
    """Row-wise :func:`farthest_point_sample` over a T x N x 3 stack."""
    t, n, _ = frames.shape
    if m > n:
        raise ValueError(f"cannot sample {m} anchors from {n} points")
    rows = np.arange(t)
    centroid = frames.mean(axis=1, keepdims=True)
    cur = np.argmin(((frames - centroid) ** 2).sum(axis=2), axis=1)
    chosen = np.zeros((t, m), dtype=np.int64)
    dist = np.full((t, n), np.inf)
    for j in range(m):
        chosen[:, j] = cur
        dist = np.minimum(dist, ((frames - frames[rows, cur][:, None, :]) ** 2).sum(axis=2))
        dist[rows[:, None], chosen[:, : j + 1]] = -1.0
        cur = np.argmax(dist, axis=1)
    return chosen


def sample_anchors(frames: np.ndarray, m: int) -> AnchorSet:
    idx = _fps_batch(np.asarray(frames, float), m) if m > 0 else np.zeros((len(frames), 0), dtype=np.int64)
    coords = np.take_along_axis(frames, idx[..., None], axis=1)
    return AnchorSet(indices=idx, coordinates=coords)


@dataclass
class Neighborhoods:
    offsets: np.ndarray  # T x M x K x 4, padded by repeating the nearest neighbour
    counts: np.ndarray  # T x M, real neighbours before padding


def gather_neighborhoods(
    frames: np.ndarray, anchors: AnchorSet, radius: float, temporal_radius: int, k: int
) -> Neighborhoods:
    """Up to ``k`` nearest points within ``radius`` from frames ``t-rt .. t+rt``.

    The frame window is truncated at the sequence ends. Candidates are ordered
    by distance with ties broken by (frame, point index).
    """
    if radius <= 0 or temporal_radius < 0 or k < 1:
        raise ValueError("need radius > 0, temporal_radius >= 0, k >= 1")
    t_len, n, _ = frames.shape
    m = anchors.coordinates.shape[1]
    offsets = np.zeros((t_len, m, k, 4))
    counts = np.zeros((t_len, m), dtype=np.int64)
    r2 = radius * radius
    for t in range(t_len):
        window = np.arange(max(0, t - temporal_radius), min(t_len - 1, t + temporal_radius) + 1)
        cand = frames[window].reshape(-1, 3)
        dt = np.repeat(window - t, n).astype(float)
        rel = cand[None, :, :] - anchors.coordinates[t][:, None, :]  # M x C x 3
        d2 = (rel * rel).sum(axis=-1)
        d2 = np.where(d2 <= r2, d2, np.inf)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        picked_d = np.take_along_axis(d2, order, axis=1)
        cnt = np.isfinite(picked_d).sum(axis=1)
        counts[t] = cnt
        # pad every slot past the real neighbours with the nearest one
        slot = np.arange(order.shape[1])[None, :]
        order = np.where(slot < np.maximum(cnt, 1)[:, None], order, order[:, :1])
        rows = np.arange(m)[:, None]
        offsets[t, :, : order.shape[1], :3] = rel[rows, order]
        offsets[t, :, : order.shape[1], 3] = dt[order]
        if order.shape[1] < k:
            offsets[t, :, order.shape[1] :] = offsets[t, :, :1]
    return Neighborhoods(offsets=offsets, counts=counts)


class Point4DConv(Module):
    """Shared two-layer perceptron over [dx, dy, dz, dt] offsets, max-pooled."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int | None = None):
        self.mlp = MLP(4, hidden or d // 2, d, rng, final_relu=True)
        self.d = d

    def __call__(self, hoods: Neighborhoods) -> Tensor:
        t, m, k, _ = hoods.offsets.shape
        feats = self.mlp(Tensor(hoods.offsets.reshape(-1, 4)))
        pooled = ad.max_(feats.reshape(t * m, k, self.d), axis=1)
        empty = hoods.counts.reshape(-1) == 0
        if empty.any():
            keep = np.repeat((~empty)[:, None], self.d, axis=1).astype(float)
            pooled = ad.mul(pooled, Tensor(keep))
        return pooled.reshape(t, m, self.d)


def point4d_conv(
    conv: Point4DConv, frames: np.ndarray, anchors: AnchorSet, radius: float, temporal_radius: int, k: int = 16
) -> Tensor:
    return conv(gather_neighborhoods(frames, anchors, radius, temporal_radius, k))


class TemporalSelfAttention(Module):
    def __init__(self, d: int, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ValueError("temporal self-attention needs at least one layer")
        self.layers = [AttentionLayer(d, rng) for _ in range(layers)]

    def __call__(self, low: Tensor) -> Tensor:
        # standardising each channel over time removes the static scene content
        x = ad.standardize(ad.max_(low, axis=1), axis=0)
        for layer in self.layers:
            x = layer(x)
        return x


def interpolation_weights(anchor_xyz: np.ndarray, points: np.ndarray, k: int = 3):
    """Inverse-square-distance weights over the ``k`` nearest anchors.

    Returns ``(indices, weights)`` of shape ``(P, k')`` with ``k' = min(k, M)``.
    A point sitting exactly on an anchor takes that anchor's value only.
    """
    d2 = ((points[:, None, :] - anchor_xyz[None, :, :]) ** 2).sum(axis=-1)
    k = min(k, anchor_xyz.shape[0])
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(d2, idx, axis=1)
    exact = near[:, :1] == 0.0
    # nearest/d^2 equals 1/d^2 up to the per-row normalisation and cannot overflow
    inv = np.where(exact, 1.0, near[:, :1]) / np.where(near > 0, near, 1.0)
    w = np.where(exact, (np.arange(k) == 0)[None, :].astype(float), inv)
    w = w / w.sum(axis=1, keepdims=True)
    return idx, w


def feature_propagation(high_dense: Tensor, anchor_xyz: np.ndarray, points: np.ndarray, k: int = 3) -> Tensor:
    """Interpolate T x M x D anchor features onto T x N x 3 points."""
    t, m, d = high_dense.shape
    if m == 0:
        raise ValueError("feature propagation needs at least one anchor")
    n = points.shape[1]
    idx, w = zip(*(interpolation_weights(anchor_xyz[ti], points[ti], k) for ti in range(t)))
    idx = np.stack(idx) + (np.arange(t) * m)[:, None, None]
    w = np.stack(w)
    kk = idx.shape[-1]
    gathered = ad.embedding_lookup(high_dense.reshape(t * m, d), idx)  # T x N x k x D
    weights = Tensor(np.repeat(w[..., None], d, axis=-1))
    return ad.sum_(ad.mul(gathered, weights), axis=2).reshape(t, n, d)


@dataclass
class PointFeatures:
    low: Tensor  # T x M x D
    high: Tensor  # T x D
    anchors: AnchorSet


class PointBranch(Module):
    def __init__(
        self,
        d: int,
        layers: int,
        rng: np.random.Generator,
        anchors: int = 64,
        radius: float = 0.3,
        temporal_radius: int = 1,
        neighbors: int = 16,
        anchor_embedding: bool = True,
    ):
        self.conv = Point4DConv(d, rng)
        self.attn = TemporalSelfAttention(d, layers, rng)
        # the offsets are translation invariant, so absolute anchor positions enter through a learned embedding
        self.pos = Linear(3, d, rng) if anchor_embedding else None
        self.num_anchors = anchors
        self.radius = radius
        self.temporal_radius = temporal_radius
        self.neighbors = neighbors

    def geometry(self, frames: np.ndarray) -> tuple[AnchorSet, Neighborhoods]:
        """Parameter-free part of the forward pass; callers may cache it per point cloud."""
        anchors = sample_anchors(frames, min(self.num_anchors, frames.shape[1]))
        hoods = gather_neighborhoods(frames, anchors, self.radius, self.temporal_radius, self.neighbors)
        return anchors, hoods

    def __call__(self, frames: np.ndarray, geometry: tuple[AnchorSet, Neighborhoods] | None = None) -> PointFeatures:
        anchors, hoods = self.geometry(frames) if geometry is None else geometry
        low = self.conv(hoods)
        if self.pos is not None:
            low = low + self.pos(Tensor(anchors.coordinates))
        return PointFeatures(low=low, high=self.attn(low), anchors=anchors)
