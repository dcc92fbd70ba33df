from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plyfuzz import corpus, seed_files, survives
from plantreg.formats import (
    SH_C0,
    PlyError,
    UnsupportedPlyFormat,
    dump_json,
    header_text,
    load_json,
    parse_header,
    read_cloud,
    read_ply,
    read_ply_bytes,
    write_ply,
)
from plantreg.geometry import PointCloud
from plantreg.splats import SplatSet

DATA = Path(__file__).parent / "data"


def colored_cloud(rng: np.random.Generator, n: int = 1000) -> PointCloud:
    return PointCloud(rng.normal(size=(n, 3)), rng.random((n, 3)))


def test_one_vertex_ascii():
    pc = read_ply_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                        b"property float z\nend_header\n0 0 0\n")
    assert isinstance(pc, PointCloud)
    np.testing.assert_array_equal(pc.points, [[0.0, 0.0, 0.0]])


@pytest.mark.parametrize("fmt", ["binary_little_endian", "ascii"])
def test_round_trip(tmp_path, rng, fmt):
    pc = colored_cloud(rng)
    path = write_ply(pc, tmp_path / "c.ply", fmt)
    back = read_ply(path)
    if fmt == "binary_little_endian":
        np.testing.assert_array_equal(back.points, pc.points)
    else:
        assert np.max(np.abs(back.points - pc.points)) <= 1e-6
    assert np.max(np.abs(back.colors - pc.colors)) <= 1 / 255


def test_normals_and_extra_properties_survive(tmp_path, rng):
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    pc = PointCloud(rng.normal(size=(20, 3)), normals=n, extra={"confidence": rng.random(20).astype(np.float32)})
    back = read_ply(write_ply(pc, tmp_path / "n.ply"))
    np.testing.assert_array_equal(back.normals, n)
    np.testing.assert_array_equal(back.extra["confidence"], pc.extra["confidence"])
    again = read_ply(write_ply(back, tmp_path / "n2.ply"))
    np.testing.assert_array_equal(again.extra["confidence"], pc.extra["confidence"])


def test_hand_built_splat_fixture():
    s = read_ply(DATA / "two_splats.ply")
    assert isinstance(s, SplatSet) and len(s) == 2
    np.testing.assert_allclose(s.means, [[0.5, -1.0, 2.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(s.log_scales, [[-3.0, -3.5, -4.0], [-2.0, -2.0, -2.0]])
    np.testing.assert_allclose(s.rotations, [[1, 0, 0, 0], [0.5, 0.5, 0.5, 0.5]])
    np.testing.assert_allclose(s.opacity, [1 / (1 + math.exp(-2.0)), 0.5])
    np.testing.assert_allclose(s.colors[0], np.clip(0.5 + SH_C0 * np.array([1.0, 0.0, -1.0]), 0, 1))
    np.testing.assert_allclose(s.extra["f_rest_0"], [0.25, -0.25])


def test_splat_round_trip(tmp_path):
    s = read_ply(DATA / "two_splats.ply")
    back = read_ply(write_ply(s, tmp_path / "s.ply"))
    np.testing.assert_allclose(back.means, s.means)
    np.testing.assert_allclose(back.opacity, s.opacity, rtol=1e-6)
    np.testing.assert_allclose(back.colors, s.colors, atol=1e-6)
    np.testing.assert_array_equal(back.extra["f_rest_0"], s.extra["f_rest_0"])
    assert isinstance(read_cloud(DATA / "two_splats.ply"), PointCloud)


def test_golden_header(tmp_path):
    pc = PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], colors=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                    normals=[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    write_ply(pc, tmp_path / "g.ply")
    assert header_text(tmp_path / "g.ply") == (DATA / "golden_header.txt").read_text()


def test_binary_output_is_byte_deterministic(tmp_path, rng):
    pc = colored_cloud(rng, 50)
    a = write_ply(pc, tmp_path / "a.ply").read_bytes()
    b = write_ply(pc, tmp_path / "b.ply").read_bytes()
    assert a == b


def test_empty_cloud_cannot_be_written(tmp_path):
    with pytest.raises(ValueError):
        write_ply(PointCloud(np.zeros((0, 3))), tmp_path / "e.ply")


def test_truncated_body_reports_offset(tmp_path, rng):
    data = write_ply(colored_cloud(rng, 10), tmp_path / "t.ply").read_bytes()
    with pytest.raises(PlyError, match="offset"):
        read_ply_bytes(data[:-5])


def test_big_endian_is_explicitly_unsupported():
    data = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n"
    with pytest.raises(UnsupportedPlyFormat):
        read_ply_bytes(data)


def test_missing_file_is_named(tmp_path):
    with pytest.raises(FileNotFoundError) as err:
        read_ply(tmp_path / "nope.ply")
    assert "nope.ply" in str(err.value) and err.value.filename.endswith("nope.ply")


def test_face_elements_are_skipped():
    pc = read_ply_bytes(seed_files()[1])
    assert len(pc) == 6


def test_header_parse_lists_properties_in_order():
    h = parse_header(seed_files()[0])
    assert h.format == "ascii"
    assert [p.name for p in h.element("vertex").properties] == ["x", "y", "z", "red", "green", "blue"]


def test_unwritable_path(tmp_path, rng):
    with pytest.raises(OSError):
        write_ply(colored_cloud(rng, 3), tmp_path / "missing_dir" / "x.ply")


def test_json_helpers(tmp_path):
    p = dump_json({"b": 1, "a": [1.5]}, tmp_path / "x.json")
    assert p.read_text() == '{\n  "b": 1,\n  "a": [\n    1.5\n  ]\n}\n'
    assert load_json(p) == {"b": 1, "a": [1.5]}
    p.write_text("{")
    with pytest.raises(ValueError):
        load_json(p)


def test_small_fuzz_corpus_never_crashes():
    assert all(survives(d) for d in corpus(300, seed=1))


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=512))
def test_arbitrary_bytes_never_crash(data):
    assert survives(data)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=256))
def test_arbitrary_body_after_valid_header_never_crashes(body):
    head = seed_files()[1].split(b"end_header\n")[0] + b"end_header\n"
    assert survives(head + body)
