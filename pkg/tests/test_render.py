from __future__ import annotations

import math

import numpy as np
import pytest
from PIL import Image

from plantreg.geometry import PointCloud
from plantreg.render import TurntableSpec, orbit_view, project, rasterize, render_frame, render_turntable


def test_single_point_draws_a_centred_disc(tmp_path):
    pc = PointCloud([[0.3, -0.2, 0.1]], colors=[[1.0, 0.0, 0.0]])
    spec = TurntableSpec(n_frames=4, width=41, height=31, point_radius=2)
    for path in render_turntable(pc, spec, tmp_path):
        img = np.asarray(Image.open(path))
        assert tuple(img[15, 20]) == (255, 0, 0)
        red = np.argwhere(np.all(img == (255, 0, 0), axis=2))
        np.testing.assert_allclose(red.mean(axis=0), [15, 20])
        assert len(red) == 13  # disc of radius 2


def test_opposite_views_differ(plant, tmp_path):
    spec = TurntableSpec(n_frames=8, width=120, height=90)
    paths = render_turntable(plant, spec, tmp_path)
    assert paths[0].read_bytes() != paths[4].read_bytes()


def test_repeat_renders_are_byte_identical(plant, tmp_path):
    spec = TurntableSpec(n_frames=3, width=80, height=60)
    a = render_turntable(plant, spec, tmp_path / "a")
    b = render_turntable(plant, spec, tmp_path / "b", threads=3)
    assert [p.name for p in a] == ["frame_0000.png", "frame_0001.png", "frame_0002.png"]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


@pytest.mark.parametrize("ortho", [False, True])
def test_point_on_the_optical_axis_hits_the_principal_point(ortho):
    spec = TurntableSpec(width=640, height=480, orthographic=ortho)
    view = orbit_view(np.array([1.0, 2.0, 3.0]), 5.0, 0.7, math.radians(25))
    p = view.eye + 2.5 * view.forward
    u, v, z = project(p[None], view, spec, scale=100.0)
    assert abs(u[0] - 320) <= 0.5 and abs(v[0] - 240) <= 0.5 and z[0] == pytest.approx(2.5)


def test_nearer_point_wins_the_pixel():
    spec = TurntableSpec(width=5, height=5, point_radius=0)
    colors = np.array([[0, 0, 255], [255, 0, 0]], dtype=np.uint8)
    u = np.array([2.5, 2.5])
    v = np.array([2.5, 2.5])
    img = rasterize(u, v, np.array([2.0, 1.0]), colors, spec)
    assert tuple(img[2, 2]) == (255, 0, 0)
    # equal depth: lower index wins
    img = rasterize(u, v, np.array([1.0, 1.0]), colors, spec)
    assert tuple(img[2, 2]) == (0, 0, 255)


def test_missing_colors_use_a_height_ramp(plant):
    img = render_frame(PointCloud(plant.points), TurntableSpec(width=60, height=60), 0)
    assert len(np.unique(img.reshape(-1, 3), axis=0)) > 5


def test_ppm_output(tmp_path):
    paths = render_turntable(PointCloud([[0.0, 0, 0], [1.0, 0, 0]]), TurntableSpec(n_frames=1), tmp_path, fmt="ppm")
    assert paths[0].suffix == ".ppm" and paths[0].read_bytes().startswith(b"P6")


def test_invalid_inputs(tmp_path):
    with pytest.raises(ValueError):
        TurntableSpec(n_frames=0)
    with pytest.raises(ValueError):
        TurntableSpec(radius_frac=0)
    with pytest.raises(ValueError):
        render_turntable(PointCloud(np.zeros((0, 3))), TurntableSpec(), tmp_path)
    with pytest.raises(ValueError):
        render_turntable(PointCloud([[0.0, 0, 0]]), TurntableSpec(), tmp_path, fmt="gif")
