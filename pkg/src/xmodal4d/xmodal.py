"""Joint transformer over stacked point and image tokens.

Point tokens come first, image tokens second. Under the default mask point
rows see only point columns while image rows see everything, so the point
half of the output never depends on image inputs and the same parameters
can be deployed on point clouds alone.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import AttentionLayer, Module, sinusoidal_positions


def build_attention_mask(t_p: int, t_i: int) -> np.ndarray:
    if t_p < 1 or t_i < 0:
        raise ValueError(f"need T_p >= 1 and T_i >= 0, got ({t_p}, {t_i})")
    n = t_p + t_i
    mask = np.ones((n, n), dtype=bool)
    mask[:t_p, t_p:] = False
    return mask


def masked_attention_layer(layer: AttentionLayer, tokens: Tensor, mask: np.ndarray) -> Tensor:
    return layer(tokens, mask=mask)


class CrossModalTransformer(Module):
    def __init__(
        self, d: int, layers: int, rng: np.random.Generator, use_mask: bool = True, positional: bool = False
    ):
        self.layers = [AttentionLayer(d, rng) for _ in range(layers)]
        self.use_mask = use_mask
        self.positional = positional

    def _with_positions(self, x: Tensor) -> Tensor:
        if not self.positional:
            return x
        return x + Tensor(sinusoidal_positions(*x.shape))

    def forward_train(self, f_point_high: Tensor, f_img_high: Tensor) -> tuple[Tensor, Tensor]:
        if f_point_high.ndim != 2 or f_img_high.ndim != 2 or f_point_high.shape[1] != f_img_high.shape[1]:
            raise ad.ShapeError(f"forward_train: point {f_point_high.shape} vs image {f_img_high.shape}")
        t_p, t_i = f_point_high.shape[0], f_img_high.shape[0]
        if self.use_mask:
            mask = build_attention_mask(t_p, t_i)
        else:
            mask = np.ones((t_p + t_i, t_p + t_i), dtype=bool)
        x = ad.concat([self._with_positions(f_point_high), self._with_positions(f_img_high)], axis=0)
        for layer in self.layers:
            x = masked_attention_layer(layer, x, mask)
        return x[:t_p], x[t_p:]

    def forward_infer(self, f_point_high: Tensor) -> Tensor:
        x = self._with_positions(f_point_high)
        mask = build_attention_mask(x.shape[0], 0)
        for layer in self.layers:
            x = masked_attention_layer(layer, x, mask)
        return x[: x.shape[0]]
