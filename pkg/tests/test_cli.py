from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from plantreg.cameras import ring_rig, save_rig
from plantreg.cli import build_parser, main
from plantreg.formats import read_ply, write_ply
from plantreg.splats import SplatSet


SCENARIO = {
    "rng_seed": 2, "n_frames": 4, "points_per_frame_base": 1500,
    "drift_rotation_deg": 1.0, "drift_translation_frac": 0.005, "noise_sigma": 1e-4,
}


def _stderr_json(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def plant_ply(tmp_path, plant):
    path = tmp_path / "plant.ply"
    write_ply(plant, path)
    return path


def test_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "plantreg.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "register-sequence" in out.stdout


def test_every_subcommand_documents_its_flags():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} lacks help"


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2


def test_register_pair_same_file_is_identity(tmp_path, plant_ply):
    out = tmp_path / "t.json"
    assert main(["register-pair", str(plant_ply), str(plant_ply), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert np.allclose(np.reshape(doc["transform"], (4, 4)), np.eye(4), atol=1e-9)
    assert doc["loss"] < 1e-8
    assert doc["stages"][0]["stage"] == "coarse"


def test_missing_input_names_path(tmp_path, capsys, plant_ply):
    missing = tmp_path / "nope.ply"
    assert main(["register-pair", str(missing), str(plant_ply), "--out", str(tmp_path / "t.json")]) == 1
    err = _stderr_json(capsys)
    assert err["path"] == str(missing)
    assert str(missing) in err["message"]


def test_missing_config_names_path(tmp_path, capsys, plant_ply):
    cfg = tmp_path / "absent.json"
    assert main(["register-pair", str(plant_ply), str(plant_ply), "--config", str(cfg)]) == 1
    assert _stderr_json(capsys)["path"] == str(cfg)


def test_config_errors_exit_two(tmp_path, capsys, plant_ply):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"ransac": {"max_iter": 3}}))
    assert main(["register-pair", str(plant_ply), str(plant_ply), "--config", str(bad)]) == 2
    assert _stderr_json(capsys)["error"] == "ConfigError"
    assert main(["register-pair", str(plant_ply), str(plant_ply), "--set", "pipeline.nope=1"]) == 2


def test_corrupt_ply_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 5\nend_header\n")
    assert main(["features", str(bad), str(tmp_path / "o.ply")]) == 1
    assert "message" in _stderr_json(capsys)


def test_filter_and_features(tmp_path, plant):
    n = len(plant)
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    q[:50] *= 1.5  # not unit: rejected
    splats = SplatSet(plant.points, np.full((n, 3), np.log(0.002)), q, np.full(n, 0.9), plant.colors)
    src = tmp_path / "s.ply"
    write_ply(splats, src)
    out, report = tmp_path / "f.ply", tmp_path / "r.json"
    assert main(["filter", str(src), str(out), "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    cloud = read_ply(out)
    assert rep["kept_count"] == len(cloud) and rep["input_count"] == n and len(cloud) == n - 50
    desc = tmp_path / "d.npy"
    assert main(["features", str(out), str(tmp_path / "n.ply"), "--descriptors", str(desc)]) == 0
    assert np.load(desc).shape == (len(cloud), 33)
    assert read_ply(tmp_path / "n.ply").normals is not None


def test_filter_rejects_plain_cloud(tmp_path, capsys, plant_ply):
    assert main(["filter", str(plant_ply), str(tmp_path / "o.ply")]) == 1
    assert _stderr_json(capsys)["error"] == "filter"


def test_convert_cameras(tmp_path):
    rig = tmp_path / "rig.json"
    save_rig(ring_rig(), rig)
    out = tmp_path / "transforms.json"
    assert main(["convert-cameras", str(rig), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["frames"]) == 15
    assert doc["frames"][0]["file_path"] == "images/L0C0.png"


def test_end_to_end_rigid_drift(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(SCENARIO))
    data = tmp_path / "data"
    assert main(["synth", str(scenario), "--out-dir", str(data)]) == 0
    alignment = tmp_path / "alignment.json"
    aligned = tmp_path / "aligned"
    assert main(["register-sequence", str(data / "manifest.json"), "--out", str(alignment),
                 "--aligned-dir", str(aligned)]) == 0
    assert len(list(aligned.glob("*.ply"))) == SCENARIO["n_frames"]
    summary = tmp_path / "summary.json"
    assert main(["check-constraints", str(alignment), "--out", str(summary), "--strict"]) == 0
    doc = json.loads(summary.read_text())
    assert doc["all_ok"]
    assert all(r["alpha_ok"] for r in doc["reports"])

    truth = json.loads((data / "ground_truth.json").read_text())["to_reference"]
    est = [e["transform"] for e in json.loads(alignment.read_text())["entries"]]
    assert np.allclose(est, truth, atol=1e-3)


def test_strict_constraint_failure_exits_one(tmp_path, capsys):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(SCENARIO))
    data = tmp_path / "data"
    main(["synth", str(scenario), "--out-dir", str(data)])
    alignment = tmp_path / "alignment.json"
    assert main(["register-sequence", str(data / "manifest.json"), "--out", str(alignment)]) == 0
    capsys.readouterr()
    assert main(["check-constraints", str(alignment), "--set", "pipeline.alpha=1e-6", "--strict"]) == 1
    assert _stderr_json(capsys)["alpha"] == [1, 2, 3]


def test_synth_rejects_unknown_scenario_keys(tmp_path, capsys):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"n_frame": 3}))
    assert main(["synth", str(scenario), "--out-dir", str(tmp_path / "d")]) == 1


def test_render_writes_frames(tmp_path, plant_ply):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_frames": 3, "width": 64, "height": 48}))
    out = tmp_path / "frames"
    assert main(["render", str(plant_ply), "--spec", str(spec), "--out-dir", str(out), "--image-format", "ppm"]) == 0
    assert sorted(p.name for p in out.iterdir()) == [f"frame_{i:04d}.ppm" for i in range(3)]


def test_render_bad_spec_is_config_error(tmp_path, plant_ply):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"frames": 3}))
    assert main(["render", str(plant_ply), "--spec", str(spec), "--out-dir", str(tmp_path / "o")]) == 2


def test_seed_reproducible(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(SCENARIO))
    for run in ("a", "b"):
        assert main(["synth", str(scenario), "--out-dir", str(tmp_path / run), "--seed", "9"]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
