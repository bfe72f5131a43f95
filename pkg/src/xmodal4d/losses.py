"""Training objectives.

Every similarity is taken between L2-normalised rows and divided by the
temperature ``tau``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DISTILL_MODES = ("none", "l2", "kl", "cosine")


class EmptyLossWarning(RuntimeWarning):
    """Every position was ignored; the loss is reported as 0."""


@dataclass
class LossConfig:
    tau: float = 0.07
    omega: float = 0.5
    distill_mode: str = "none"

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if self.distill_mode not in DISTILL_MODES:
            raise ValueError(f"distill_mode must be one of {DISTILL_MODES}")


def _check_tau(tau: float) -> None:
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


def temporal_contrastive(features: Tensor, labels, tau: float = 0.07) -> Tensor:
    """Supervised contrastive loss over the rows of ``features``.

    ``features`` stacks two views along time (2T x D) and ``labels`` the
    duplicated frame labels. For anchor k the positives are the other rows
    with the same label and the denominator runs over all other rows. Each
    anchor's terms are averaged over its positives and the anchors summed;
    anchors without a positive contribute nothing.
    """
    _check_tau(tau)
    labels = np.asarray(labels)
    n = features.shape[0]
    if labels.shape != (n,):
        raise ad.ShapeError(f"temporal_contrastive: features {features.shape} vs labels {labels.shape}")
    z = ad.l2_normalize(features, axis=1)
    sim = ad.mul_scalar(ad.matmul(z, ad.transpose(z)), 1.0 / tau)
    others = ~np.eye(n, dtype=bool)
    positive = (labels[:, None] == labels[None, :]) & others
    n_pos = positive.sum(axis=1)
    has_pos = n_pos > 0
    weight = np.where(positive, 1.0 / np.maximum(n_pos, 1)[:, None], 0.0)
    # sum_k sum_u w_ku * (lse_k - s_ku) with sum_u w_ku = 1 for every kept anchor
    shift = np.where(others, sim.data, -np.inf).max(axis=1) if n > 1 else np.zeros(n)
    shifted = ad.sub(sim, Tensor(np.repeat(shift[:, None], n, axis=1)))
    lse = ad.log(ad.sum_(ad.mul(ad.exp(shifted), Tensor(others.astype(float))), axis=1)) + Tensor(shift)
    pulled = ad.sum_(ad.mul(sim, Tensor(weight)))
    return ad.sum_(ad.mul(lse, Tensor(has_pos.astype(float)))) - pulled


def _paired_infonce(sims: Tensor) -> Tensor:
    """``-sum_i log softmax(sims)_i`` over a 1-D vector of paired similarities."""
    m = sims.shape[0]
    c = float(sims.data.max())
    lse = ad.add(ad.log(ad.sum_(ad.exp(ad.add(sims, -c)))), c)
    return ad.mul_scalar(lse, float(m)) - ad.sum_(sims)


def _paired_similarities(a: Tensor, b: Tensor, tau: float) -> Tensor:
    return ad.mul_scalar(ad.sum_(ad.mul(a, b), axis=1), 1.0 / tau)


def _check_pair(f_a: Tensor, f_b: Tensor, name: str) -> None:
    if f_a.shape != f_b.shape or f_a.ndim != 2:
        raise ad.ShapeError(f"{name}: {f_a.shape} vs {f_b.shape}")
    if f_a.shape[0] < 2:
        raise ValueError(f"{name} needs at least two frames, got {f_a.shape[0]}")


TAC_READINGS = ("paired", "cross")


def _shifted_infonce(za: Tensor, zb: Tensor, tau: float, reading: str) -> Tensor:
    """InfoNCE over aligned rows ``za[i]`` <-> ``zb[i]``.

    ``paired`` normalises each paired similarity against the other paired
    similarities; ``cross`` scores anchor ``za[i]`` against every ``zb[j]``.
    """
    if reading == "paired":
        return _paired_infonce(_paired_similarities(za, zb, tau))
    if reading != "cross":
        raise ValueError(f"unknown consistency reading {reading!r}; choose from {TAC_READINGS}")
    sims = ad.mul_scalar(ad.matmul(za, ad.transpose(zb)), 1.0 / tau)
    m = sims.shape[0]
    shift = sims.data.max(axis=1)
    shifted = ad.sub(sims, Tensor(np.repeat(shift[:, None], m, axis=1)))
    lse = ad.log(ad.sum_(ad.exp(shifted), axis=1)) + Tensor(shift)
    return ad.sum_(lse) - ad.sum_(ad.mul(sims, Tensor(np.eye(m))))


def consistency_adv(f_a: Tensor, f_b: Tensor, tau: float = 0.07, reading: str = "paired") -> Tensor:
    """Advance pairing: row ``i-1`` of ``f_a`` with row ``i`` of ``f_b``."""
    _check_tau(tau)
    _check_pair(f_a, f_b, "consistency_adv")
    za, zb = ad.l2_normalize(f_a, axis=1), ad.l2_normalize(f_b, axis=1)
    return _shifted_infonce(za[:-1], zb[1:], tau, reading)


def consistency_lag(f_a: Tensor, f_b: Tensor, tau: float = 0.07, reading: str = "paired") -> Tensor:
    """Lag pairing: row ``i+1`` of ``f_a`` with row ``i`` of ``f_b``."""
    _check_tau(tau)
    _check_pair(f_a, f_b, "consistency_lag")
    za, zb = ad.l2_normalize(f_a, axis=1), ad.l2_normalize(f_b, axis=1)
    return _shifted_infonce(za[1:], zb[:-1], tau, reading)


def tac(f_a: Tensor, f_b: Tensor, tau: float = 0.07, reading: str = "paired") -> Tensor:
    return ad.mul_scalar(consistency_adv(f_a, f_b, tau, reading) + consistency_lag(f_a, f_b, tau, reading), 0.5)


def task_loss(logits: Tensor, labels, ignore_value: int | None = -1, mode: str = "frame") -> Tensor:
    """Mean cross-entropy over non-ignored positions.

    ``mode="frame"`` and ``"point"`` take row-wise logits (``(T, A)`` or
    ``(..., S)``); ``"video"`` averages ``(T, A)`` logits over time and scores
    them against a single label.
    """
    labels = np.asarray(labels)
    if mode == "video":
        pooled = ad.mean(logits, axis=0).reshape(1, logits.shape[-1])
        return task_loss(pooled, labels.reshape(1), ignore_value, mode="frame")
    if mode not in ("frame", "point"):
        raise ValueError(f"unknown task_loss mode {mode!r}")
    flat = logits if logits.ndim == 2 else logits.reshape(-1, logits.shape[-1])
    labels = labels.reshape(-1)
    if ignore_value is not None and not (labels != ignore_value).any():
        warnings.warn("task_loss: every position is ignored", EmptyLossWarning, stacklevel=2)
    return ad.cross_entropy(flat, labels, ignore_index=ignore_value)


def total_loss(lp: Tensor, li: Tensor, ltcont: Tensor, ltac: Tensor, omega: float = 0.5) -> Tensor:
    return lp + li + ad.mul_scalar(ltcont, omega) + ad.mul_scalar(ltac, 1.0 - omega)


def distill_loss(mode: str, f_a: Tensor, f_b: Tensor) -> Tensor:
    """Feature-matching baselines; ``f_b`` plays the teacher in ``kl``."""
    if f_a.shape != f_b.shape or f_a.ndim != 2:
        raise ad.ShapeError(f"distill_loss: {f_a.shape} vs {f_b.shape}")
    if mode == "l2":
        diff = f_a - f_b
        return ad.mean(ad.sum_(ad.mul(diff, diff), axis=1))
    if mode == "kl":
        p_b = ad.softmax(f_b, axis=1)
        p_a = ad.softmax(f_a, axis=1)
        return ad.mean(ad.sum_(ad.mul(p_b, ad.log(p_b) - ad.log(p_a)), axis=1))
    if mode == "cosine":
        cos = ad.sum_(ad.mul(ad.l2_normalize(f_a, axis=1), ad.l2_normalize(f_b, axis=1)), axis=1)
        return ad.mean(ad.add(ad.mul_scalar(cos, -1.0), 1.0))
    raise ValueError(f"unknown distill mode {mode!r}")
