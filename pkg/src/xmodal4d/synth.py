"""Deterministic synthetic 4D scenes: point videos with aligned image renders.

A scene holds a floor, a static target cube, an *actor* cube that follows an
action script (e.g. idle -> approach -> dwell -> retreat) and distractor cubes
that wander on their own. All cubes have the same geometry; only their
rendered intensity pattern tells them apart, so the image stream carries
identity cues that the point stream lacks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

IGNORE = -1

FLOOR, TARGET, ACTOR, DISTRACTOR = 0, 1, 2, 3

BOX_MIN = np.array([-1.2, -1.2, 0.0])
BOX_MAX = np.array([1.2, 1.2, 0.8])

CUBE_SIZE = 0.26

MOTIONS = ("idle", "approach", "dwell", "lift", "lower", "retreat", "slide_left", "slide_right")
SCRIPTS = {
    2: ("approach", "retreat"),
    3: ("approach", "dwell", "retreat"),
    4: ("idle", "approach", "dwell", "retreat"),
    5: ("idle", "approach", "dwell", "lift", "retreat"),
    6: ("idle", "approach", "dwell", "lift", "lower", "retreat"),
    7: ("idle", "approach", "dwell", "lift", "lower", "retreat", "slide_left"),
    8: MOTIONS,
}


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float] = (0.0, -2.4, 2.6)
    look_at: tuple[float, float, float] = (0.0, 0.1, 0.1)
    focal: float = 0.8  # in units of image width
    width: int = 32
    height: int = 32

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.asarray(self.position, float)
        fwd = np.asarray(self.look_at, float) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return right, down, fwd

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points (K,3) -> integer pixel (u, v) and camera depth."""
        right, down, fwd = self.basis()
        rel = np.asarray(pts, float).reshape(-1, 3) - np.asarray(self.position, float)
        z = rel @ fwd
        safe = np.where(z > 1e-9, z, 1.0)
        f = self.focal * self.width
        u = np.floor(f * (rel @ right) / safe + self.width / 2).astype(np.int64)
        v = np.floor(f * (rel @ down) / safe + self.height / 2).astype(np.int64)
        return u, v, np.where(z > 1e-9, z, np.inf)

    def visible(self, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height) & np.isfinite(depth)


@dataclass
class SceneConfig:
    frames: int = 24
    points: int = 256
    height: int = 32
    width: int = 32
    channels: int = 1
    num_actions: int = 4
    num_semantic: int = 4
    num_distractors: int = 2
    actor_speed: float = 1.0
    distractor_speed: float = 1.0
    focal: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if self.points < 16:
            raise ValueError(f"points must be >= 16, got {self.points}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.num_actions not in SCRIPTS:
            raise ValueError(f"num_actions must be in {sorted(SCRIPTS)}, got {self.num_actions}")
        if self.num_semantic < 4:
            raise ValueError("num_semantic must be >= 4 (floor, target, actor, distractor)")
        if min(self.height, self.width) < 8 or self.height % 8 or self.width % 8:
            raise ValueError("height and width must be positive multiples of 8")
        if self.num_distractors < 0 or self.actor_speed < 0 or self.distractor_speed < 0 or self.focal <= 0:
            raise ValueError("object counts, speeds and focal length must be non-negative/positive")

    def camera(self) -> Camera:
        return Camera(focal=self.focal, width=self.width, height=self.height)


@dataclass
class PointCloudVideo:
    frames: np.ndarray  # T x N x 3
    frame_labels: np.ndarray  # T
    point_labels: np.ndarray | None = None  # T x N

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class ImageSequence:
    frames: np.ndarray  # T x H x W x C in [0, 1]
    label_maps: np.ndarray | None = None  # T x H x W, IGNORE where unlabeled
    depth: np.ndarray | None = None  # T x H x W in [0, 1]


@dataclass
class Scene:
    video: PointCloudVideo
    images: ImageSequence
    config: SceneConfig
    camera: Camera = field(default_factory=Camera)


# ------------------------------------------------------------------ geometry


def _cube_surface(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform samples on the surface of a unit cube centred at 0."""
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-0.5, 0.5, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        pts[sel, a] = sign[sel]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def _cube_grid(g: int) -> np.ndarray:
    s = (np.arange(g) + 0.5) / g - 0.5
    a, b = np.meshgrid(s, s, indexing="ij")
    a, b = a.ravel(), b.ravel()
    faces = []
    for axis in range(3):
        others = [o for o in range(3) if o != axis]
        for sign in (-0.5, 0.5):
            f = np.empty((a.size, 3))
            f[:, axis] = sign
            f[:, others[0]] = a
            f[:, others[1]] = b
            faces.append(f)
    return np.concatenate(faces)


def _floor_grid(g: int) -> np.ndarray:
    s = np.linspace(BOX_MIN[0] + 0.02, BOX_MAX[0] - 0.02, g)
    x, y = np.meshgrid(s, s, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), np.zeros(x.size)], axis=1)


def _texture(kind: int, local: np.ndarray) -> np.ndarray:
    """Intensity of a surface sample given its object-local coordinates."""
    if kind == FLOOR:
        checker = (np.floor(local[:, 0] * 2.5) + np.floor(local[:, 1] * 2.5)) % 2
        return 0.22 + 0.06 * checker
    if kind == TARGET:
        return np.full(len(local), 0.55)
    if kind == ACTOR:
        checker = (np.floor(local[:, 0] * 4 + 2) + np.floor(local[:, 1] * 4 + 2) + np.floor(local[:, 2] * 4 + 2)) % 2
        return 0.12 + 0.85 * checker
    stripes = np.floor(local[:, 2] * 3 + 1.5) % 2
    return 0.4 + 0.15 * stripes


_COLORS = {FLOOR: (0.8, 0.8, 0.8), TARGET: (0.9, 0.5, 0.2), ACTOR: (0.3, 0.6, 1.0), DISTRACTOR: (0.5, 0.9, 0.4)}


def split_durations(total: int, parts: int, rng: np.random.Generator) -> np.ndarray:
    """Random positive segment lengths summing to ``total`` (parts capped at total)."""
    parts = min(parts, total)
    weights = rng.uniform(0.6, 1.4, parts)
    raw = weights / weights.sum() * total
    lengths = np.maximum(1, np.floor(raw).astype(int))
    while lengths.sum() < total:
        lengths[np.argmax(raw - lengths)] += 1
    while lengths.sum() > total:
        lengths[np.argmax(lengths)] -= 1
    return lengths


def _script_path(
    motions: tuple[str, ...], lengths: np.ndarray, home: np.ndarray, goal: np.ndarray, speed: float, rng
) -> np.ndarray:
    """Per-frame centre positions for a scripted object."""
    pos = home.copy()
    out = []
    bob_phase = rng.uniform(0, 2 * np.pi)
    for motion, n in zip(motions, lengths):
        start = pos.copy()
        for i in range(n):
            frac = (i + 1) / n
            if motion == "approach":
                pos = start + frac * (goal - start)
            elif motion == "retreat":
                pos = start + frac * (home - start)
            elif motion == "dwell":
                pos = start + np.array([0.0, 0.0, 0.06 * abs(np.sin(np.pi * frac * 2 + bob_phase))])
            elif motion == "lift":
                pos = start + np.array([0.0, 0.0, 0.2 * frac])
            elif motion == "lower":
                pos = start - np.array([0.0, 0.0, min(0.2, start[2] - home[2]) * frac])
            elif motion == "slide_left":
                pos = start + np.array([0.0, 0.25 * frac, 0.0])
            elif motion == "slide_right":
                pos = start - np.array([0.0, 0.25 * frac, 0.0])
            out.append(pos.copy())
        if motion == "dwell":
            pos = start
    path = np.array(out)
    return home + speed * (path - home)


def _distractor_path(t: int, home: np.ndarray, speed: float, rng: np.random.Generator) -> np.ndarray:
    """Back-and-forth wandering along x with rests, unrelated to the script."""
    pos = home.copy()
    out = []
    while len(out) < t:
        n = int(rng.integers(3, 8))
        if rng.uniform() < 0.35:
            step = np.zeros(3)
        else:
            step = np.array([rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.11), 0.0, 0.0])
        for _ in range(n):
            nxt = pos + step
            if not (BOX_MIN[0] + 0.25 < nxt[0] < BOX_MAX[0] - 0.25):
                step = -step
                nxt = pos + step
            pos = nxt
            out.append(pos.copy())
    path = np.array(out[:t])
    return home + speed * (path - home)


def generate_scene(config: SceneConfig) -> Scene:
    """Build a scene whose every array is a pure function of ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    t, n = config.frames, config.points
    camera = config.camera()

    target = np.array([rng.uniform(-0.55, -0.25), rng.uniform(-0.3, 0.3), CUBE_SIZE / 2])
    actor_home = target + np.array([rng.uniform(0.85, 1.15), rng.uniform(-0.15, 0.15), 0.0])
    actor_goal = target + np.array([CUBE_SIZE + 0.04, 0.0, 0.0])

    motions = SCRIPTS[config.num_actions]
    lengths = split_durations(t, len(motions), rng)
    frame_labels = np.repeat(np.arange(len(lengths)), lengths)
    actor_path = _script_path(motions[: len(lengths)], lengths, actor_home, actor_goal, config.actor_speed, rng)

    # (kind, semantic label, T x 3 centre path)
    objects = [(TARGET, 1, np.repeat(target[None], t, 0)), (ACTOR, 2, actor_path)]
    for k in range(config.num_distractors):
        side = -1.0 if k % 2 == 0 else 1.0
        home = np.array([rng.uniform(-0.7, 0.7), side * rng.uniform(0.55, 0.85), CUBE_SIZE / 2])
        sem = 3 + k % (config.num_semantic - 3)
        objects.append((DISTRACTOR, sem, _distractor_path(t, home, config.distractor_speed, rng)))

    # point budget: 40% floor, the rest split evenly across cubes
    n_floor = int(round(0.4 * n))
    share = np.full(len(objects), (n - n_floor) // len(objects))
    share[: (n - n_floor) - share.sum()] += 1
    floor_pts = np.column_stack(
        [rng.uniform(BOX_MIN[0], BOX_MAX[0], n_floor), rng.uniform(BOX_MIN[1], BOX_MAX[1], n_floor), np.zeros(n_floor)]
    )
    local = [_cube_surface(int(m), rng) for m in share]

    frames = np.empty((t, n, 3))
    point_labels = np.empty((t, n), dtype=np.int64)
    for ti in range(t):
        chunks, labs = [floor_pts], [np.full(n_floor, FLOOR)]
        for (kind, sem, path), loc in zip(objects, local):
            chunks.append(path[ti] + CUBE_SIZE * loc)
            labs.append(np.full(len(loc), sem))
        frames[ti] = np.concatenate(chunks)
        point_labels[ti] = np.concatenate(labs)
    frames = np.clip(frames, BOX_MIN, BOX_MAX)

    video = PointCloudVideo(frames=frames, frame_labels=frame_labels, point_labels=point_labels)
    images = _render(objects, camera, config, video)
    return Scene(video=video, images=images, config=config, camera=camera)


def _render(objects, camera: Camera, config: SceneConfig, video: PointCloudVideo) -> ImageSequence:
    t, h, w = config.frames, config.height, config.width
    grid = _cube_grid(10)
    floor = _floor_grid(72)
    floor_val = _texture(FLOOR, floor)
    frames = np.zeros((t, h, w, config.channels))
    depth_img = np.zeros((t, h, w))
    label_maps = np.empty((t, h, w), dtype=np.int64)
    max_depth = np.linalg.norm(np.asarray(camera.position)) + 2.0
    for ti in range(t):
        pts = [floor]
        vals = [floor_val]
        kinds = [np.full(len(floor), FLOOR)]
        for kind, _, path in objects:
            pts.append(path[ti] + CUBE_SIZE * grid)
            vals.append(_texture(kind, grid))
            kinds.append(np.full(len(grid), kind))
        pts_a = np.concatenate(pts)
        val = np.concatenate(vals)
        kind_a = np.concatenate(kinds)
        winner, u, v, depth = zbuffer(pts_a, camera)
        inten = val[winner]
        if config.channels == 3:
            color = np.array([_COLORS[k] for k in kind_a[winner]])
            frames[ti, v, u] = inten[:, None] * color
        else:
            frames[ti, v, u, 0] = inten
        depth_img[ti, v, u] = 1.0 - np.clip(depth / max_depth, 0.0, 1.0)
        label_maps[ti] = project_labels(video.frames[ti], video.point_labels[ti], camera)
    return ImageSequence(frames=np.clip(frames, 0.0, 1.0), label_maps=label_maps, depth=depth_img)


def zbuffer(points: np.ndarray, camera: Camera):
    """Nearest point per pixel.

    Returns indices of the winning points and their pixel coordinates and
    depth. Depth ties go to the lower point index.
    """
    u, v, depth = camera.project(points)
    vis = np.nonzero(camera.visible(u, v, depth))[0]
    if vis.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros(0)
    pix = v[vis] * camera.width + u[vis]
    order = np.lexsort((vis, depth[vis], pix))
    _, first = np.unique(pix[order], return_index=True)
    winner = vis[order[first]]
    return winner, u[winner], v[winner], depth[winner]


def project_labels(points: np.ndarray, point_labels: np.ndarray, camera: Camera, ignore: int = IGNORE) -> np.ndarray:
    """Label map holding, per pixel, the label of the nearest projected point."""
    out = np.full((camera.height, camera.width), ignore, dtype=np.int64)
    points = np.asarray(points, float).reshape(-1, 3)
    if len(points) == 0:
        return out
    winner, u, v, _ = zbuffer(points, camera)
    out[v, u] = np.asarray(point_labels).reshape(-1)[winner]
    return out


def augment(
    video: PointCloudVideo,
    images: ImageSequence,
    seed: int,
    max_rotation_deg: float = 15.0,
    jitter_sigma: float = 0.01,
    jitter_clip: float = 0.05,
    scale_range: tuple[float, float] = (0.9, 1.1),
    brightness_range: tuple[float, float] = (0.8, 1.2),
    flip_prob: float = 0.5,
) -> tuple[PointCloudVideo, ImageSequence]:
    """Random rigid/photometric perturbation; labels are carried over untouched.

    Passing zero rotation and jitter, unit ranges and ``flip_prob=0`` gives
    the identity.
    """
    rng = np.random.default_rng(seed)
    angle = np.deg2rad(rng.uniform(-max_rotation_deg, max_rotation_deg))
    scale = rng.uniform(*scale_range)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = video.frames
    if angle != 0.0:
        pts = pts @ rot.T
    if scale != 1.0:
        pts = pts * scale
    if jitter_sigma > 0:
        pts = pts + np.clip(rng.normal(0.0, jitter_sigma, pts.shape), -jitter_clip, jitter_clip)
    bright = rng.uniform(*brightness_range)
    flip = rng.uniform() < flip_prob
    img = images.frames if bright == 1.0 else np.clip(images.frames * bright, 0.0, 1.0)
    maps, depth = images.label_maps, images.depth
    if flip:
        img = img[:, :, ::-1]
        maps = None if maps is None else maps[:, :, ::-1]
        depth = None if depth is None else depth[:, :, ::-1]
    out_video = PointCloudVideo(
        frames=np.array(pts),
        frame_labels=video.frame_labels.copy(),
        point_labels=None if video.point_labels is None else video.point_labels.copy(),
    )
    out_images = ImageSequence(
        frames=np.ascontiguousarray(img),
        label_maps=None if maps is None else np.ascontiguousarray(maps),
        depth=None if depth is None else np.ascontiguousarray(depth),
    )
    return out_video, out_images


def make_corpus(base: SceneConfig, count: int, seed_offset: int = 0) -> list[Scene]:
    kw = asdict(base)
    return [generate_scene(SceneConfig(**{**kw, "seed": base.seed + seed_offset + i})) for i in range(count)]


# ------------------------------------------------------------------ dump format

_ARRAYS = {
    "points.f64": ("video", "frames", "<f8"),
    "frame_labels.i64": ("video", "frame_labels", "<i8"),
    "point_labels.i64": ("video", "point_labels", "<i8"),
    "images.f64": ("images", "frames", "<f8"),
    "label_maps.i64": ("images", "label_maps", "<i8"),
    "depth.f64": ("images", "depth", "<f8"),
}


def save_scene(scene: Scene, directory: str | Path) -> Path:
    """Write ``meta.txt`` (key=value) and raw little-endian arrays."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {f"config.{k}": v for k, v in asdict(scene.config).items()}
    for fname, (part, attr, dtype) in _ARRAYS.items():
        arr = getattr(getattr(scene, part), attr)
        if arr is None:
            continue
        meta[f"shape.{fname}"] = "x".join(str(s) for s in arr.shape)
        np.ascontiguousarray(arr, dtype=dtype).tofile(d / fname)
    (d / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return d


def read_meta(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_scene(directory: str | Path) -> Scene:
    d = Path(directory)
    meta = read_meta(d / "meta.txt")
    types = {f.name: f.type for f in fields(SceneConfig)}
    cfg_kw = {}
    for k, v in meta.items():
        if k.startswith("config."):
            name = k[len("config.") :]
            cfg_kw[name] = float(v) if types[name] in ("float", float) else int(v)
    arrays = {}
    for fname, (_, _, dtype) in _ARRAYS.items():
        key = f"shape.{fname}"
        if key in meta:
            shape = tuple(int(s) for s in meta[key].split("x"))
            arrays[fname] = np.fromfile(d / fname, dtype=dtype).reshape(shape).astype(
                np.float64 if dtype == "<f8" else np.int64
            )
    config = SceneConfig(**cfg_kw)
    video = PointCloudVideo(arrays["points.f64"], arrays["frame_labels.i64"], arrays.get("point_labels.i64"))
    images = ImageSequence(arrays["images.f64"], arrays.get("label_maps.i64"), arrays.get("depth.f64"))
    return Scene(video=video, images=images, config=config, camera=config.camera())
