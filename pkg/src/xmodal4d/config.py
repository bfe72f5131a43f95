"""Run configuration: a flat key=value text format with ``scene.*`` sub-keys."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .git_branch import FUSION_MODES
from .losses import DISTILL_MODES, TAC_READINGS
from .synth import SceneConfig

TASKS = ("action_seg", "sem_seg")
IMAGE_SOURCES = ("rgb", "depth")
CLIP_MODES = ("global", "per_branch")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train_scenes: int = 64
    test_scenes: int = 32
    test_seed_offset: int = 100_000
    task: str = "action_seg"
    image_source: str = "rgb"
    # point branch
    anchors: int = 64
    dim: int = 128
    point_layers: int = 2
    radius: float = 0.3
    temporal_radius: int = 2
    neighbors: int = 16
    # image branch
    use_git: bool = True
    git_layers: int = 1
    window_size: int = 3
    tg_stride: int = 1
    fusion_mode: str = "cross_attention"
    use_correlation: bool = True
    use_window: bool = True
    # cross-modal transformer
    xmodal_layers: int = 2
    use_mask: bool = True
    positional: bool = False
    # losses
    tau: float = 0.07
    omega: float = 0.5
    distill_mode: str = "none"
    use_tcont: bool = True
    use_tac: bool = True
    tac_reading: str = "paired"
    loss_normalize: bool = True
    # optimisation
    base_lr: float = 0.01
    warmup_epochs: int = 10
    weight_decay: float = 1e-4
    momentum: float = 0.9
    grad_clip: float = 2.0
    clip_mode: str = "per_branch"
    batch_size: int = 2
    epochs: int = 40
    augment: bool = True
    aug_views: int = 4
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self) -> None:
        try:
            self.scene.validate()
        except ValueError as exc:
            raise ConfigError(f"scene: {exc}") from None
        checks = [
            (self.task in TASKS, f"task must be one of {TASKS}"),
            (self.image_source in IMAGE_SOURCES, f"image_source must be one of {IMAGE_SOURCES}"),
            (self.fusion_mode in FUSION_MODES, f"fusion_mode must be one of {FUSION_MODES}"),
            (self.distill_mode in DISTILL_MODES, f"distill_mode must be one of {DISTILL_MODES}"),
            (self.window_size >= 1 and self.window_size % 2 == 1, "window_size must be a positive odd number"),
            (1 <= self.tg_stride < self.scene.frames, "tg_stride must satisfy 1 <= tg_stride < scene.frames"),
            (self.tau > 0, "tau must be > 0"),
            (0.0 <= self.omega <= 1.0, "omega must lie in [0, 1]"),
            (self.anchors >= 1 and self.anchors <= self.scene.points, "anchors must be in [1, scene.points]"),
            (self.dim >= 2 and self.dim % 2 == 0, "dim must be even and >= 2"),
            (self.point_layers >= 1, "point_layers must be >= 1"),
            (self.xmodal_layers >= 0 and self.git_layers >= 1, "layer counts must be non-negative (git_layers >= 1)"),
            (self.radius > 0 and self.temporal_radius >= 0 and self.neighbors >= 1, "bad neighbourhood settings"),
            (self.base_lr >= 0 and self.warmup_epochs >= 0 and self.weight_decay >= 0, "bad optimiser settings"),
            (self.grad_clip >= 0, "grad_clip must be >= 0 (0 disables clipping)"),
            (self.tac_reading in TAC_READINGS, f"tac_reading must be one of {TAC_READINGS}"),
            (self.clip_mode in CLIP_MODES, f"clip_mode must be one of {CLIP_MODES}"),
            (0.0 <= self.momentum < 1.0, "momentum must lie in [0, 1)"),
            (self.batch_size >= 1 and self.epochs >= 0, "batch_size must be >= 1 and epochs >= 0"),
            (self.aug_views >= 2, "aug_views must be >= 2"),
            (self.train_scenes >= 1 and self.test_scenes >= 0, "scene counts must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_text(self) -> str:
        lines = []
        for key, value in flatten(self).items():
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: dict[str, str] | None = None, **kw) -> RunConfig:
        cfg = apply_overrides(self, overrides or {})
        scene_kw = {k[len("scene.") :]: v for k, v in kw.items() if k.startswith("scene.")}
        top_kw = {k: v for k, v in kw.items() if not k.startswith("scene.")}
        if scene_kw:
            top_kw["scene"] = replace(cfg.scene, **scene_kw)
        return replace(cfg, **top_kw)

    @property
    def window_half(self) -> int:
        return self.window_size // 2


def flatten(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "scene":
            for k, v in asdict(value).items():
                out[f"scene.{k}"] = v
        else:
            out[f.name] = value
    return out


def _convert(raw: str, like: object, key: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    known = flatten(cfg)
    scene_kw, top_kw = {}, {}
    for key, raw in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        value = _convert(str(raw), known[key], key)
        if key.startswith("scene."):
            scene_kw[key[len("scene.") :]] = value
        else:
            top_kw[key] = value
    scene = replace(cfg.scene, **scene_kw)
    return replace(cfg, scene=scene, **top_kw)


def parse_pairs(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs = parse_pairs(Path(path).read_text().splitlines()) if path else {}
    pairs.update(overrides or {})
    cfg = apply_overrides(RunConfig(), pairs)
    cfg.validate()
    return cfg


def config_from_text(text: str) -> RunConfig:
    return apply_overrides(RunConfig(), parse_pairs(text.splitlines()))
