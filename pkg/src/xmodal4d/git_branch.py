"""Gradient-aware image branch.

Frames and their temporal gradients are encoded separately, smoothed by
learnable sliding windows, fused into a correlation feature, and merged with
the frame features through attention to give the high-level image feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, AttentionLayer, Conv2d, Linear, Module

FUSION_MODES = ("concat", "sum", "self_attention", "cross_attention")


def temporal_gradient(frames: np.ndarray, n: int = 1) -> np.ndarray:
    """``g_t = I_t - I_min(t+n, T-1)``; the last ``n`` gradients are zero."""
    t = frames.shape[0]
    if not 1 <= n < t:
        raise ValueError(f"temporal gradient stride must satisfy 1 <= n < T={t}, got {n}")
    ahead = np.minimum(np.arange(t) + n, t - 1)
    return frames - frames[ahead]


class FrameEncoder(Module):
    """(conv3x3 -> relu -> maxpool2) x 3, global average pool, per-channel
    standardisation over the frames, linear."""

    def __init__(self, c_in: int, d: int, rng: np.random.Generator, channels: tuple[int, ...] = (8, 16, 32)):
        self.convs = []
        prev = c_in
        for c in channels:
            self.convs.append(Conv2d(prev, c, 3, rng))
            prev = c
        self.proj = Linear(prev, d, rng)

    def __call__(self, frames: np.ndarray | Tensor) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))
        for conv in self.convs:
            x = ad.maxpool2d(ad.relu(conv(x)), 2)
        return self.proj(ad.standardize(ad.mean(x, axis=(2, 3)), axis=0))


def encode_frames(encoder: FrameEncoder, frames: np.ndarray) -> Tensor:
    return encoder(frames)


def window_indices(t: int, n_w: int) -> np.ndarray:
    """(2n_w+1) x T frame indices with edge replication."""
    return np.clip(np.arange(t)[None, :] + np.arange(-n_w, n_w + 1)[:, None], 0, t - 1)


def sliding_window_fuse(f: Tensor, weights: Tensor, n_w: int) -> Tensor:
    """``out_t = sum_k w_k * f_clamp(t+k)`` for ``k = -n_w .. n_w``."""
    if n_w < 0:
        raise ValueError("window half-width must be >= 0")
    taps = 2 * n_w + 1
    if weights.shape != (taps,):
        raise ad.ShapeError(f"sliding_window_fuse: weights {weights.shape} for half-width {n_w}")
    t, d = f.shape
    shifted = ad.embedding_lookup(f, window_indices(t, n_w))  # taps x T x D
    out = ad.matmul(weights.reshape(1, taps), shifted.reshape(taps, t * d))
    return out.reshape(t, d)


class CorrelationMLP(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.mlp = MLP(2 * d, d, d, rng)

    def __call__(self, f_img_win: Tensor, f_grad_win: Tensor) -> Tensor:
        if f_img_win.shape != f_grad_win.shape:
            raise ad.ShapeError(f"correlation_feature: {f_img_win.shape} vs {f_grad_win.shape}")
        return self.mlp(ad.concat([f_img_win, f_grad_win], axis=1))


def correlation_feature(mlp: CorrelationMLP, f_img_win: Tensor, f_grad_win: Tensor) -> Tensor:
    return mlp(f_img_win, f_grad_win)


def git_cross_attention(layers, f_cor: Tensor, f_img: Tensor) -> Tensor:
    """Queries from the correlation feature, keys/values from frame features."""
    if f_cor.shape != f_img.shape:
        raise ad.ShapeError(f"git_cross_attention: {f_cor.shape} vs {f_img.shape}")
    x = f_cor
    for layer in layers:
        x = layer(x, context=f_img)
    return x


@dataclass
class GitFeatures:
    f_img: Tensor
    f_grad: Tensor
    f_img_win: Tensor
    f_grad_win: Tensor
    f_cor: Tensor
    f_high: Tensor


class GitBranch(Module):
    """Image branch with ablation switches.

    ``use_correlation=False`` replaces the correlation/attention pipeline with
    a plain perceptron over concatenated frame and gradient features.
    ``use_window=False`` skips the sliding windows.
    """

    def __init__(
        self,
        c_in: int,
        d: int,
        layers: int,
        rng: np.random.Generator,
        window: int = 1,
        tg_stride: int = 1,
        fusion_mode: str = "cross_attention",
        use_correlation: bool = True,
        use_window: bool = True,
    ):
        if fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {fusion_mode!r}")
        self.img_encoder = FrameEncoder(c_in, d, rng)
        self.grad_encoder = FrameEncoder(c_in, d, rng)
        self.n_w = window
        self.tg_stride = tg_stride
        self.fusion_mode = fusion_mode
        self.use_correlation = use_correlation
        self.use_window = use_window and use_correlation
        taps = 2 * window + 1
        if self.use_window:
            init = np.full(taps, 1.0 / taps)
            self.alpha = Tensor(init.copy(), requires_grad=True)
            self.beta = Tensor(init.copy(), requires_grad=True)
        self.correlation = CorrelationMLP(d, rng)
        if use_correlation and fusion_mode in ("cross_attention", "self_attention"):
            cross = fusion_mode == "cross_attention"
            self.fusion_layers = [AttentionLayer(d, rng, cross=cross) for _ in range(max(1, layers))]
        elif use_correlation and fusion_mode == "concat":
            self.fusion_proj = Linear(2 * d, d, rng)

    def __call__(self, frames: np.ndarray) -> GitFeatures:
        with ad.scope("image"):
            f_img = self.img_encoder(frames)
            f_grad = self.grad_encoder(temporal_gradient(frames, self.tg_stride))
            if self.use_window:
                f_img_win = sliding_window_fuse(f_img, self.alpha, self.n_w)
                f_grad_win = sliding_window_fuse(f_grad, self.beta, self.n_w)
            else:
                f_img_win, f_grad_win = f_img, f_grad
            f_cor = self.correlation(f_img_win, f_grad_win)
            if not self.use_correlation:
                f_high = f_cor
            elif self.fusion_mode == "cross_attention":
                f_high = git_cross_attention(self.fusion_layers, f_cor, f_img)
            elif self.fusion_mode == "self_attention":
                f_high = f_cor
                for layer in self.fusion_layers:
                    f_high = layer(f_high)
            elif self.fusion_mode == "concat":
                f_high = self.fusion_proj(ad.concat([f_img, f_cor], axis=1))
            else:
                f_high = f_img + f_cor
        return GitFeatures(f_img, f_grad, f_img_win, f_grad_win, f_cor, f_high)
