from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmodal4d.git_branch import temporal_gradient
from xmodal4d.metrics import segments_from_labels
from xmodal4d.synth import (
    BOX_MAX,
    BOX_MIN,
    IGNORE,
    Camera,
    SceneConfig,
    augment,
    generate_scene,
    load_scene,
    project_labels,
    save_scene,
)

SMALL = SceneConfig(frames=8, points=64, height=16, width=16)


def test_same_seed_bit_identical():
    a, b = generate_scene(replace(SMALL, seed=7)), generate_scene(replace(SMALL, seed=7))
    assert np.array_equal(a.video.frames, b.video.frames)
    assert np.array_equal(a.video.frame_labels, b.video.frame_labels)
    assert np.array_equal(a.video.point_labels, b.video.point_labels)
    assert np.array_equal(a.images.frames, b.images.frames)
    assert np.array_equal(a.images.label_maps, b.images.label_maps)


def test_different_seed_differs():
    a, b = generate_scene(replace(SMALL, seed=1)), generate_scene(replace(SMALL, seed=2))
    assert not np.array_equal(a.video.frames, b.video.frames)


def test_zero_speed_scene_is_static():
    scene = generate_scene(replace(SMALL, actor_speed=0.0, distractor_speed=0.0))
    frames = scene.video.frames
    assert all(np.array_equal(frames[0], f) for f in frames[1:])
    assert not temporal_gradient(scene.images.frames, 1).any()


def test_three_action_script_has_three_runs():
    scene = generate_scene(replace(SMALL, num_actions=3, frames=12))
    segs = segments_from_labels(scene.video.frame_labels)
    assert len(segs) >= 3
    assert [s.label for s in segs] == sorted(s.label for s in segs)


@pytest.mark.parametrize("bad", [dict(frames=1), dict(points=15), dict(num_actions=1), dict(height=0)])
def test_degenerate_config_rejected(bad):
    with pytest.raises(ValueError):
        generate_scene(replace(SMALL, **bad))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_scene_invariants(seed, actions):
    cfg = replace(SMALL, seed=seed, num_actions=actions, frames=12)
    scene = generate_scene(cfg)
    v = scene.video
    assert v.frames.shape == (12, 64, 3)
    assert np.all(v.frames >= BOX_MIN) and np.all(v.frames <= BOX_MAX)
    assert v.frame_labels.min() >= 0 and v.frame_labels.max() < actions
    assert v.point_labels.min() >= 0 and v.point_labels.max() < cfg.num_semantic
    img = scene.images.frames
    assert img.shape == (12, 16, 16, 1) and img.min() >= 0.0 and img.max() <= 1.0


def test_rgb_channels():
    scene = generate_scene(replace(SMALL, channels=3))
    assert scene.images.frames.shape[-1] == 3


def test_scene_box_projects_inside_viewport():
    cam = SMALL.camera()
    corners = np.array([[x, y, z] for x in BOX_MIN[0:1].tolist() + BOX_MAX[0:1].tolist()
                        for y in (BOX_MIN[1], BOX_MAX[1]) for z in (BOX_MIN[2], BOX_MAX[2])])
    u, v, depth = cam.project(corners)
    assert cam.visible(u, v, depth).all()


def test_project_single_center_point():
    cam = Camera(width=16, height=16)
    centre = np.array(cam.look_at)[None]
    out = project_labels(centre, np.array([5]), cam)
    assert (out != IGNORE).sum() == 1 and out[out != IGNORE][0] == 5


def test_project_zbuffer_nearest_wins():
    cam = Camera(width=16, height=16)
    look = np.array(cam.look_at)
    pos = np.array(cam.position)
    ray = (look - pos) / np.linalg.norm(look - pos)
    near, far = look - 0.3 * ray, look + 0.3 * ray
    out = project_labels(np.stack([far, near]), np.array([7, 2]), cam)
    assert set(out[out != IGNORE].tolist()) == {2}


def test_project_empty_input():
    cam = Camera(width=8, height=8)
    assert (project_labels(np.zeros((0, 3)), np.zeros(0, int), cam) == IGNORE).all()


def test_unoccluded_points_read_back():
    scene = generate_scene(SMALL)
    cam = scene.camera
    pts, labs = scene.video.frames[0], scene.video.point_labels[0]
    out = project_labels(pts, labs, cam)
    u, v, depth = cam.project(pts)
    vis = cam.visible(u, v, depth)
    for i in np.nonzero(vis)[0]:
        same = vis & (u == u[i]) & (v == v[i])
        nearest = np.nonzero(same)[0][np.argmin(depth[same])]
        if nearest == i:
            assert out[v[i], u[i]] == labs[i]


def test_identity_augmentation():
    scene = generate_scene(SMALL)
    video, images = augment(scene.video, scene.images, 3, max_rotation_deg=0, jitter_sigma=0,
                            scale_range=(1, 1), brightness_range=(1, 1), flip_prob=0)
    assert np.array_equal(video.frames, scene.video.frames)
    assert np.array_equal(images.frames, scene.images.frames)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augmentation_preserves_labels_and_bounds_jitter(seed):
    scene = generate_scene(SMALL)
    video, images = augment(scene.video, scene.images, seed)
    assert np.array_equal(video.frame_labels, scene.video.frame_labels)
    assert segments_from_labels(video.frame_labels) == segments_from_labels(scene.video.frame_labels)
    jit, _ = augment(scene.video, scene.images, seed, max_rotation_deg=0, scale_range=(1, 1))
    assert np.abs(jit.frames - scene.video.frames).max() <= 0.05 + 1e-12
    again, _ = augment(scene.video, scene.images, seed)
    assert np.array_equal(again.frames, video.frames)


def test_scene_dump_roundtrip(tmp_path):
    scene = generate_scene(replace(SMALL, seed=11))
    save_scene(scene, tmp_path / "s")
    meta = (tmp_path / "s" / "meta.txt").read_text()
    assert "config.seed=11" in meta
    back = load_scene(tmp_path / "s")
    assert back.config == scene.config
    assert np.array_equal(back.video.frames, scene.video.frames)
    assert np.array_equal(back.images.label_maps, scene.images.label_maps)
    assert np.array_equal(back.images.depth, scene.images.depth)
