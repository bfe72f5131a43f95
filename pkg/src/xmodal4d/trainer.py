"""Model assembly, training loop, evaluation and parameter bookkeeping."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig, config_from_text
from .git_branch import GitBranch
from .losses import distill_loss, tac, task_loss, temporal_contrastive, total_loss
from .metrics import MetricReport, evaluate_sequences, mean_iou
from .nn import Linear, Module
from .point_branch import PointBranch, feature_propagation
from .synth import IGNORE, Scene, augment, make_corpus
from .xmodal import CrossModalTransformer

LOSS_TERMS = ("lp", "li", "ltcont", "ltac", "total")
ABLATION_AXES = ("git_on_off", "fusion_mode", "window_size", "tg_stride", "use_mask", "distill_mode", "losses_on_off")


class NumericalError(RuntimeError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r} ({value})")
        self.term = term


class CheckpointMismatch(ValueError):
    pass


# ------------------------------------------------------------------ model


class CrossModalModel(Module):
    """Point branch + cross-modal transformer + heads, with an optional image branch.

    The point branch is built first from the seeded generator, so the
    point-only baseline and the dual-modality model start from identical
    point weights.
    """

    def __init__(self, cfg: RunConfig):
        rng = np.random.default_rng(cfg.seed)
        d, a = cfg.dim, cfg.scene.num_actions
        self.cfg = cfg
        self.point = PointBranch(
            d, cfg.point_layers, rng, anchors=cfg.anchors, radius=cfg.radius,
            temporal_radius=cfg.temporal_radius, neighbors=cfg.neighbors,
        )
        self.xmodal = CrossModalTransformer(d, cfg.xmodal_layers, rng, use_mask=cfg.use_mask, positional=cfg.positional)
        self.point_head = Linear(d, a, rng)
        if cfg.task == "sem_seg":
            self.seg_head = Linear(d, cfg.scene.num_semantic, rng)
        if cfg.use_git:
            c_in = cfg.scene.channels if cfg.image_source == "rgb" else 1
            self.git = GitBranch(
                c_in, d, cfg.git_layers, rng, window=cfg.window_half, tg_stride=cfg.tg_stride,
                fusion_mode=cfg.fusion_mode, use_correlation=cfg.use_correlation, use_window=cfg.use_window,
            )
            self.image_head = Linear(d, a, rng)

    @property
    def has_image_branch(self) -> bool:
        return self.cfg.use_git

    def image_modules(self) -> list[Module]:
        return [self.git, self.image_head] if self.has_image_branch else []

    def _fuse(self, p_high: Tensor, i_high: Tensor | None):
        if i_high is None:
            return self.xmodal.forward_infer(p_high), None
        if self.cfg.distill_mode != "none":
            # distillation baselines align features directly instead of sharing a transformer
            return p_high, i_high
        return self.xmodal.forward_train(p_high, i_high)

    def point_logits(self, frames: np.ndarray, p_out: Tensor, feats) -> dict[str, Tensor]:
        out = {"frame": self.point_head(p_out)}
        if self.cfg.task == "sem_seg":
            t, m, d = feats.low.shape
            # per-anchor features enriched with the frame-level context, then propagated to every point
            ctx = ad.embedding_lookup(p_out, np.repeat(np.arange(t), m)).reshape(t, m, d)
            dense = feature_propagation(feats.low + ctx, feats.anchors.coordinates, frames)
            out["point"] = self.seg_head(dense)
        return out

    def infer(self, frames: np.ndarray) -> dict[str, Tensor]:
        """Deployment path: point clouds only."""
        feats = self.point(frames)
        p_out = feats.high if self.cfg.distill_mode != "none" else self.xmodal.forward_infer(feats.high)
        return self.point_logits(frames, p_out, feats)

    def image_input(self, images) -> np.ndarray:
        if self.cfg.image_source == "depth":
            return images.depth[..., None]
        return images.frames


# ------------------------------------------------------------------ losses


@dataclass
class StepLosses:
    lp: Tensor
    li: Tensor
    ltcont: Tensor
    ltac: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in LOSS_TERMS}


def _zero() -> Tensor:
    return Tensor(0.0)


def _scale(x: Tensor, c: float, on: bool) -> Tensor:
    return ad.mul_scalar(x, c) if on else x


class ViewBank:
    """Fixed set of augmented views per scene with memoised point geometry.

    Anchor sampling and neighbourhood search do not depend on weights, so
    each view's geometry is computed once and reused across epochs (and
    across runs that share the bank).
    """

    def __init__(self, cfg: RunConfig, corpus: list[Scene]):
        self.corpus = corpus
        self.views = cfg.aug_views if cfg.augment else 1
        self.seed = cfg.seed
        self.augment = cfg.augment
        self.key = _geometry_key(cfg)
        self._cache: dict[tuple[int, int], tuple] = {}

    def compatible(self, cfg: RunConfig, corpus: list[Scene]) -> bool:
        views = cfg.aug_views if cfg.augment else 1
        return (corpus is self.corpus and views == self.views and cfg.seed == self.seed
                and cfg.augment == self.augment and _geometry_key(cfg) == self.key)

    def get(self, scene_idx: int, view: int, point: PointBranch):
        key = (scene_idx, view)
        if key not in self._cache:
            scene = self.corpus[scene_idx]
            if self.augment:
                video, images = augment(scene.video, scene.images, _view_seed(self.seed, scene_idx, view))
            else:
                video, images = scene.video, scene.images
            self._cache[key] = (video, images, point.geometry(video.frames))
        return self._cache[key]


def _geometry_key(cfg: RunConfig) -> tuple:
    return (cfg.anchors, cfg.radius, cfg.temporal_radius, cfg.neighbors)


def _view_seed(seed: int, scene_idx: int, view: int) -> int:
    return int(np.random.default_rng([seed, scene_idx, view]).integers(2**31))


def pick_views(bank: ViewBank, seed: int, epoch: int, scene_idx: int) -> tuple[int, int]:
    if bank.views == 1:
        return 0, 0
    a, b = np.random.default_rng([seed, epoch, scene_idx]).choice(bank.views, size=2, replace=False)
    return int(a), int(b)


def compute_losses(model: CrossModalModel, first, second=None) -> StepLosses:
    """All loss terms for one scene.

    ``first`` and ``second`` are ``(video, images, geometry)`` views; the
    second view only feeds the contrastive term. Geometry may be ``None``.
    """
    cfg = model.cfg
    norm = cfg.loss_normalize
    video, images, geom = first
    labels = video.frame_labels
    t = labels.shape[0]

    feats = model.point(video.frames, geom)
    if not model.has_image_branch:
        logits = model.point_logits(video.frames, model.xmodal.forward_infer(feats.high), feats)
        lp = _point_task_loss(cfg, logits, video)
        return StepLosses(lp, _zero(), _zero(), _zero(), lp)

    gf = model.git(model.image_input(images))
    p_out, i_out = model._fuse(feats.high, gf.f_high)
    lp = _point_task_loss(cfg, model.point_logits(video.frames, p_out, feats), video)
    with ad.scope("image"):
        li = task_loss(model.image_head(i_out), labels)

    ltcont = _zero()
    if cfg.use_tcont:
        images2 = images if second is None else second[1]
        gf2 = model.git(model.image_input(images2))
        both = ad.concat([gf.f_cor, gf2.f_cor], axis=0)
        ltcont = _scale(temporal_contrastive(both, np.concatenate([labels, labels]), cfg.tau), 1.0 / (2 * t), norm)

    parts = []
    if cfg.use_tac:
        parts.append(_scale(tac(gf.f_grad, gf.f_img, cfg.tau, cfg.tac_reading), 1.0 / (t - 1), norm))
    if cfg.distill_mode != "none":
        # the image branch acts as a frozen teacher for the point features
        parts.append(distill_loss(cfg.distill_mode, feats.high, gf.f_high.detach()))
    elif cfg.use_tac:
        parts.append(_scale(tac(feats.high, gf.f_high, cfg.tau, cfg.tac_reading), 1.0 / (t - 1), norm))
    ltac = sum(parts[1:], parts[0]) if parts else _zero()

    return StepLosses(lp, li, ltcont, ltac, total_loss(lp, li, ltcont, ltac, cfg.omega))


def _point_task_loss(cfg: RunConfig, logits: dict[str, Tensor], video) -> Tensor:
    if cfg.task == "sem_seg":
        return task_loss(logits["point"], video.point_labels, IGNORE, mode="point")
    return task_loss(logits["frame"], video.frame_labels)


def check_finite(losses: StepLosses) -> None:
    for term, value in losses.values().items():
        if not np.isfinite(value):
            raise NumericalError(term, value)


# ------------------------------------------------------------------ data


def training_corpus(cfg: RunConfig) -> list[Scene]:
    return make_corpus(cfg.scene, cfg.train_scenes)


def heldout_corpus(cfg: RunConfig) -> list[Scene]:
    return make_corpus(cfg.scene, cfg.test_scenes, seed_offset=cfg.test_seed_offset)


# ------------------------------------------------------------------ training


@dataclass
class RunRecord:
    epochs: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    params_train: int = 0
    params_infer: int = 0

    def losses(self, term: str = "total") -> list[float]:
        return [e[term] for e in self.epochs]


def clip_groups(model: CrossModalModel, mode: str) -> np.ndarray:
    """Group id per parameter: one group for ``global``, point and image sides for ``per_branch``."""
    params = model.parameters()
    if mode == "global":
        return np.zeros(len(params), dtype=np.int64)
    image = {id(p) for m in model.image_modules() for p in m.parameters()}
    return np.array([int(id(p) in image) for p in params], dtype=np.int64)


def clip_gradients(grads: list[np.ndarray], groups: np.ndarray, max_norm: float) -> list[np.ndarray]:
    """Rescale each group to L2 norm at most ``max_norm`` (0 disables)."""
    if max_norm <= 0:
        return grads
    out = list(grads)
    for g in np.unique(groups):
        idx = np.nonzero(groups == g)[0]
        norm = float(np.sqrt(sum(float((grads[i] * grads[i]).sum()) for i in idx)))
        if norm > max_norm:
            for i in idx:
                out[i] = grads[i] * (max_norm / norm)
    return out


def train(
    cfg: RunConfig,
    corpus: list[Scene] | None = None,
    output_dir: str | Path | None = None,
    eval_corpus: list[Scene] | None = None,
    log=None,
    bank: ViewBank | None = None,
) -> tuple[CrossModalModel, RunRecord]:
    """Run the full optimisation; writes a run directory when ``output_dir`` is set."""
    cfg.validate()
    start = time.perf_counter()
    corpus = training_corpus(cfg) if corpus is None else corpus
    model = CrossModalModel(cfg)
    if bank is None or not bank.compatible(cfg, corpus):
        bank = ViewBank(cfg, corpus)
    params = model.parameters()
    groups = clip_groups(model, cfg.clip_mode)
    state = ad.OptimizerState(lr=cfg.base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    record = RunRecord(
        params_train=count_params(cfg, "train", model, corpus[0]),
        params_infer=count_params(cfg, "infer", model, corpus[0]),
    )
    run_dir = Path(output_dir) if output_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(cfg.to_text())
        (run_dir / "record.jsonl").write_text("")

    for epoch in range(1, cfg.epochs + 1):
        state.lr = ad.warmup_lr(epoch, cfg.base_lr, cfg.warmup_epochs)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(corpus))
        sums = dict.fromkeys(LOSS_TERMS, 0.0)
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b : b + cfg.batch_size]
            grads = None
            for idx in batch:
                v1, v2 = pick_views(bank, cfg.seed, epoch, int(idx))
                losses = compute_losses(model, bank.get(int(idx), v1, model.point), bank.get(int(idx), v2, model.point))
                check_finite(losses)
                for k, v in losses.values().items():
                    sums[k] += v
                ad.backward(losses.total, params)
                if grads is None:
                    grads = [p.grad.copy() for p in params]
                else:
                    for acc, p in zip(grads, params):
                        acc += p.grad
            grads = clip_gradients([g / len(batch) for g in grads], groups, cfg.grad_clip)
            ad.sgd_step(params, grads, state)
        entry = {"epoch": epoch, "lr": state.lr, **{k: v / len(corpus) for k, v in sums.items()}}
        record.epochs.append(entry)
        if run_dir is not None:
            with open(run_dir / "record.jsonl", "a") as fh:
                fh.write(json.dumps(entry) + "\n")
            save_model(model, run_dir / "checkpoint.ckpt", epoch)
        if log is not None:
            log(entry)

    if eval_corpus:
        report = evaluate(model, eval_corpus, "point_only")
        record.evals.append({"mode": "point_only", **report.as_dict()})
    record.wall_clock = time.perf_counter() - start
    if run_dir is not None:
        if cfg.epochs == 0:
            save_model(model, run_dir / "checkpoint.ckpt", 0)
        (run_dir / "report.json").write_text(json.dumps(asdict(record), indent=2))
    return model, record


# ------------------------------------------------------------------ checkpoints


def save_model(model: CrossModalModel, path: str | Path, epoch: int = 0) -> None:
    ad.save_checkpoint(path, model.state_dict(), f"# epoch={epoch}\n" + model.cfg.to_text())


def load_model(path: str | Path, cfg: RunConfig | None = None) -> CrossModalModel:
    """Rebuild a model from a checkpoint; ``cfg`` must match the stored config."""
    arrays, meta = ad.load_checkpoint(path)
    stored = config_from_text(meta)
    if cfg is not None and _arch(cfg) != _arch(stored):
        diff = sorted(k for k in _arch(cfg) if _arch(cfg)[k] != _arch(stored)[k])
        raise CheckpointMismatch(f"checkpoint config differs in {diff}")
    model = CrossModalModel(stored if cfg is None else cfg)
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(str(exc)) from None
    return model


_ARCH_KEYS = (
    "dim", "point_layers", "anchors", "radius", "temporal_radius", "neighbors", "use_git", "git_layers",
    "window_size", "tg_stride", "fusion_mode", "use_correlation", "use_window", "xmodal_layers", "use_mask",
    "positional", "distill_mode", "task", "image_source",
)


def _arch(cfg: RunConfig) -> dict:
    out = {k: getattr(cfg, k) for k in _ARCH_KEYS}
    out.update({f"scene.{k}": getattr(cfg.scene, k) for k in ("num_actions", "num_semantic", "channels")})
    return out


# ------------------------------------------------------------------ evaluation


def predict(model: CrossModalModel, scene: Scene, mode: str = "point_only") -> dict[str, np.ndarray]:
    """Argmax predictions on an un-augmented scene.

    ``point_only`` uses the deployment path; ``dual`` runs the training-time
    cross-modal pass and also returns the image head's predictions.
    """
    frames = scene.video.frames
    with ad.no_grad():
        if mode == "point_only":
            logits = model.infer(frames)
            return {k: v.data.argmax(axis=-1) for k, v in logits.items()}
        if mode != "dual":
            raise ValueError(f"unknown evaluation mode {mode!r}")
        if not model.has_image_branch:
            raise ValueError("dual evaluation needs a model with an image branch")
        feats = model.point(frames)
        gf = model.git(model.image_input(scene.images))
        p_out, i_out = model._fuse(feats.high, gf.f_high)
        out = {k: v.data.argmax(axis=-1) for k, v in model.point_logits(frames, p_out, feats).items()}
        with ad.scope("image"):
            out["image"] = model.image_head(i_out).data.argmax(axis=-1)
        return out


def evaluate(model: CrossModalModel, corpus: list[Scene], mode: str = "point_only", head: str = "point") -> MetricReport:
    """Corpus metrics for the point head (or the image head in ``dual`` mode)."""
    if head not in ("point", "image"):
        raise ValueError(f"unknown head {head!r}")
    if head == "image" and mode != "dual":
        raise ValueError("the image head is only available in dual mode")
    preds, gts, pts_pred, pts_gt = [], [], [], []
    for scene in corpus:
        out = predict(model, scene, mode)
        preds.append(out["image" if head == "image" else "frame"])
        gts.append(scene.video.frame_labels)
        if "point" in out and head == "point":
            pts_pred.append(out["point"].reshape(-1))
            pts_gt.append(scene.video.point_labels.reshape(-1))
    report = evaluate_sequences(preds, gts)
    if pts_pred:
        report.miou = mean_iou(np.concatenate(pts_pred), np.concatenate(pts_gt), model.cfg.scene.num_semantic, IGNORE)
    return report


def evaluate_checkpoint(path: str | Path, cfg: RunConfig, corpus: list[Scene], mode: str = "point_only") -> MetricReport:
    return evaluate(load_model(path, cfg), corpus, mode)


# ------------------------------------------------------------------ parameter counts


def count_params(cfg: RunConfig, path: str = "infer", model: CrossModalModel | None = None, scene: Scene | None = None) -> int:
    """Scalars among the model parameters reachable from the named forward path's output."""
    if path not in ("train", "infer"):
        raise ValueError(f"path must be 'train' or 'infer', got {path!r}")
    model = CrossModalModel(cfg) if model is None else model
    if scene is None:
        scene = make_corpus(cfg.scene, 1)[0]
    if path == "infer":
        out = model.infer(scene.video.frames)
        root = sum(ad.sum_(v) for v in out.values())
    else:
        view = (scene.video, scene.images, None)
        root = compute_losses(model, view, view).total
    reachable = {id(t) for t in ad.leaves(root)}
    return sum(p.size for p in model.parameters() if id(p) in reachable)


def image_param_count(model: CrossModalModel) -> int:
    return sum(m.num_parameters() for m in model.image_modules())


# ------------------------------------------------------------------ ablations


def ablation_variants(axis: str) -> list[tuple[str, dict]]:
    if axis == "git_on_off":
        return [("point_only", {"use_git": False}), ("with_git", {"use_git": True})]
    if axis == "fusion_mode":
        return [(m, {"fusion_mode": m}) for m in ("concat", "sum", "self_attention", "cross_attention")]
    if axis == "window_size":
        return [(f"window_{w}", {"window_size": w}) for w in (1, 3, 5, 7)]
    if axis == "tg_stride":
        return [(f"tg_{n}", {"tg_stride": n}) for n in (1, 4, 7)]
    if axis == "use_mask":
        return [("unmasked", {"use_mask": False}), ("masked", {"use_mask": True})]
    if axis == "distill_mode":
        return [(m, {"distill_mode": m}) for m in ("none", "l2", "kl", "cosine")]
    if axis == "losses_on_off":
        off = {"use_tcont": False, "use_tac": False}
        return [
            ("vanilla", {"use_correlation": False, "use_window": False, **off}),
            ("+correlation", {"use_correlation": True, "use_window": False, **off}),
            ("+window", {"use_correlation": True, "use_window": True, **off}),
            ("+tcont", {"use_correlation": True, "use_window": True, "use_tcont": True, "use_tac": False}),
            ("+tac", {"use_correlation": True, "use_window": True, "use_tcont": True, "use_tac": True}),
        ]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablate(cfg: RunConfig, axis: str, train_set=None, test_set=None, log=None, bank=None) -> list[dict]:
    """Train every variant of ``axis`` with the shared seed and report held-out point-head metrics."""
    train_set = training_corpus(cfg) if train_set is None else train_set
    test_set = heldout_corpus(cfg) if test_set is None else test_set
    bank = ViewBank(cfg, train_set) if bank is None else bank
    rows = []
    for name, overrides in ablation_variants(axis):
        variant = cfg.with_overrides(**overrides)
        variant.validate()
        model, record = train(variant, train_set, bank=bank)
        report = evaluate(model, test_set, "point_only")
        row = {"variant": name, **report.as_dict(), "params_train": record.params_train,
               "params_infer": record.params_infer, "final_loss": record.epochs[-1]["total"] if record.epochs else None}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["variant", "acc", "edit", "f1_10", "f1_25", "f1_50", "params_train", "params_infer"]
    lines = ["  ".join(f"{c:>14}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c)
            cells.append(f"{v:>14.2f}" if isinstance(v, float) else f"{str(v):>14}")
        lines.append("  ".join(cells))
    return "\n".join(lines)
