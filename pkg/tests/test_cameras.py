from __future__ import annotations

import math
from pathlib import Path

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plantreg.cameras import (
    DivisionCamera,
    RigError,
    convert_distortion,
    emit_transforms,
    load_rig,
    parse_rig,
    ring_rig,
    rig_document,
    save_rig,
)

DATA = Path(__file__).parent / "data"


def cam(kappa: float, w: int = 4032, h: int = 3024, **kw) -> DivisionCamera:
    return DivisionCamera(kappa=kappa, width=w, height=h, fx=3000.0, fy=3000.0, cx=w / 2, cy=h / 2, **kw)


def k1_oracle(kappa: float, w: int, h: int) -> float:
    """Correctly rounded -kappa / sqrt(w^2 + h^2) via 60-digit arithmetic."""
    with mpmath.workdps(60):
        return float(-mpmath.mpf(kappa) / mpmath.sqrt(mpmath.mpf(w) ** 2 + mpmath.mpf(h) ** 2))


def ulps(a: float, b: float) -> float:
    return abs(a - b) / math.ulp(b) if b else abs(a) / math.ulp(0.0)


def test_zero_kappa_means_no_distortion():
    p = convert_distortion(cam(0.0, 640, 480))
    assert (p.k1, p.k2, p.k3, p.k4, p.p1, p.p2) == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_three_four_five():
    p = convert_distortion(cam(5.0, 3, 4))
    assert p.k1 == -1.0 and p.k2 == 1.0


def test_full_resolution_example():
    p = convert_distortion(cam(-0.2))
    assert math.sqrt(4032**2 + 3024**2) == 5040.0
    assert p.k1 == pytest.approx(0.2 / 5040, rel=1e-15)
    assert p.k2 == p.k1 * p.k1


@settings(max_examples=300, deadline=None)
@given(st.floats(-10, 10, allow_nan=False), st.integers(1, 20000), st.integers(1, 20000))
def test_within_one_ulp_of_exact(kappa, w, h):
    p = convert_distortion(cam(kappa, w, h))
    assert ulps(p.k1, k1_oracle(kappa, w, h)) <= 1
    assert p.k2 == p.k1 * p.k1
    if kappa:
        assert math.copysign(1, p.k1) == -math.copysign(1, kappa)


def test_fifteen_camera_rig_round_trips(tmp_path):
    rig = ring_rig()
    assert len(rig) == 15
    path = save_rig(rig, tmp_path / "rig.json")
    back = load_rig(path)
    assert back == rig
    assert load_rig(save_rig(back, tmp_path / "again.json")) == back


def test_zero_angles_give_identity_rotation():
    np.testing.assert_array_equal(cam(0.1).pose.rotation, np.eye(3))


def test_euler_convention_is_extrinsic_degrees():
    c = cam(0.0, rotation_deg=(0.0, 0.0, 90.0))
    np.testing.assert_allclose(c.pose.rotation @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    # extrinsic x then z: R = Rz @ Rx
    c = cam(0.0, rotation_deg=(90.0, 0.0, 90.0))
    rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    np.testing.assert_allclose(c.pose.rotation, rz @ rx, atol=1e-15)


def test_golden_transforms_file(tmp_path):
    rig = [
        cam(0.0, 640, 480, name="front"),
        cam(-0.25, 2448, 2048, name="side", rotation_deg=(90.0, 0.0, 45.0), translation=(0.5, -0.25, 1.0)),
    ]
    out = emit_transforms([convert_distortion(c) for c in rig], ["images/front.png", "images/side.png"],
                          tmp_path / "transforms.json")
    assert out.read_bytes() == (DATA / "golden_transforms.json").read_bytes()


def test_identity_pose_block_and_zero_distortion(tmp_path):
    import json
    out = emit_transforms([convert_distortion(cam(0.0))], ["a.png"], tmp_path / "t.json")
    frame = json.loads(out.read_text())["frames"][0]
    assert frame["transform_matrix"] == np.eye(4).tolist()
    assert all(frame[k] == 0.0 for k in ("k1", "k2", "k3", "k4", "p1", "p2"))


def test_one_image_per_camera(tmp_path):
    with pytest.raises(ValueError):
        emit_transforms([convert_distortion(cam(0.0))], [], tmp_path / "t.json")


@pytest.mark.parametrize(
    "entry, message",
    [
        ({"kappa": 0.1, "width": 10, "height": 10, "fx": 1, "fy": 1, "cx": 5}, "'cy'"),
        ({"kappa": "x", "width": 10, "height": 10, "fx": 1, "fy": 1, "cx": 5, "cy": 5}, "'kappa'"),
        ({"kappa": 0, "width": 10.5, "height": 10, "fx": 1, "fy": 1, "cx": 5, "cy": 5}, "'width'"),
        ({"kappa": 0, "width": 10, "height": 10, "fx": 1, "fy": 1, "cx": 5, "cy": 5, "rotation_deg": [1, 2]},
         "'rotation_deg'"),
        ({"kappa": 0, "width": 10, "height": 10, "fx": -1, "fy": 1, "cx": 5, "cy": 5}, "focal"),
    ],
)
def test_bad_entries_name_the_field(entry, message):
    with pytest.raises(RigError, match=message):
        parse_rig({"cameras": [entry]})


def test_scale_factors_pass_through():
    doc = rig_document([cam(0.1, scale_factors=(1.0, 0.5))])
    assert parse_rig(doc)[0].scale_factors == (1.0, 0.5)


def test_bad_euler_order():
    with pytest.raises(RigError):
        parse_rig({"euler_order": "abc", "cameras": []})
