import json
import subprocess
import sys

import numpy as np
import pytest

from kfields import io as nkio
from kfields.cli import main
from kfields.geometry import OrientedPointCloud


def _write_sphere_xyz(path, n=400, radius=0.4, seed=0):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = radius * dirs
    rows = np.hstack([pts, dirs])
    np.savetxt(path, rows, fmt="%.9g")
    return OrientedPointCloud(pts, dirs)


def test_reconstruct_obj_end_to_end(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    mesh_path = tmp_path / "out.obj"
    _write_sphere_xyz(cloud_path)
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(mesh_path), "--grid", "48"])
    assert rc == 0
    mesh = nkio.read_mesh(str(mesh_path))
    assert mesh.is_watertight()
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(np.median(r) - 0.4) < 0.01
    err = capsys.readouterr().err
    for stage in ("read", "normalize", "solve", "evaluate", "extract",
                  "denormalize", "write"):
        assert stage in err


def test_reconstruct_ply_output(tmp_path):
    cloud_path = tmp_path / "in.xyz"
    mesh_path = tmp_path / "out.ply"
    _write_sphere_xyz(cloud_path, n=200)
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(mesh_path), "--grid", "32"])
    assert rc == 0
    assert mesh_path.read_bytes()[:3] == b"ply"
    mesh = nkio.read_mesh(str(mesh_path))
    assert len(mesh.triangles) > 0


def test_reconstruct_deterministic(tmp_path):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=150)
    a = tmp_path / "a.obj"
    b = tmp_path / "b.obj"
    assert main(["reconstruct", "--input", str(cloud_path),
                 "--output", str(a), "--grid", "24"]) == 0
    assert main(["reconstruct", "--input", str(cloud_path),
                 "--output", str(b), "--grid", "24"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_reconstruct_unsupported_output_extension(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=100)
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(tmp_path / "out.stl"), "--grid", "16"])
    assert rc == 1
    assert "unsupported mesh format" in capsys.readouterr().err


def test_reconstruct_missing_input_is_runtime_error(tmp_path, capsys):
    rc = main(["reconstruct", "--input", str(tmp_path / "nope.xyz"),
               "--output", str(tmp_path / "out.obj")])
    assert rc == 2
    assert "read" in capsys.readouterr().err


def test_reconstruct_empty_input_is_usage_error(tmp_path, capsys):
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    rc = main(["reconstruct", "--input", str(empty),
               "--output", str(tmp_path / "out.obj")])
    assert rc == 1
    assert "no points parsed" in capsys.readouterr().err


def test_learned_mode_requires_checkpoint(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=50)
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(tmp_path / "out.obj"), "--mode", "learned"])
    assert rc == 1
    assert "--checkpoint" in capsys.readouterr().err


def test_learned_weighted_requires_lambda(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=50)
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(tmp_path / "out.obj"),
               "--mode", "learned-weighted",
               "--checkpoint", str(tmp_path / "x.nkf")])
    assert rc == 1
    assert "--lambda" in capsys.readouterr().err


def test_unknown_flag_exits_one(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["reconstruct", "--input", "a", "--output", "b", "--bogus"])
    assert info.value.code == 1


def test_unknown_command_exits_one():
    with pytest.raises(SystemExit) as info:
        main(["transmogrify"])
    assert info.value.code == 1


def test_train_and_learned_reconstruct(tmp_path, capsys):
    # tiny end-to-end pass: 2 steps on 2 shapes, then use the checkpoint
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "steps = 2\nresolution = 8\nfeature_dim = 4\nepsilon = 0.02\n")
    ck = tmp_path / "model.nkf"
    log = tmp_path / "log.csv"
    rc = main(["train", "--config", str(cfg), "--checkpoint", str(ck),
               "--output", str(log), "--shapes", "2", "--points", "30"])
    assert rc == 0
    assert ck.exists() and log.exists()
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "step,loss,bce,l1,grad_norm"
    assert len(lines) == 3

    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=120)
    out = tmp_path / "out.obj"
    rc = main(["reconstruct", "--input", str(cloud_path),
               "--output", str(out), "--mode", "learned",
               "--checkpoint", str(ck), "--lambda", "1e-6", "--grid", "24"])
    assert rc == 0
    assert nkio.read_mesh(str(out)).is_watertight()


def test_train_bad_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("resolution = -3\n")
    rc = main(["train", "--config", str(cfg),
               "--checkpoint", str(tmp_path / "m.nkf"),
               "--output", str(tmp_path / "l.csv"), "--shapes", "1"])
    assert rc == 1


def test_eval_json_report(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=300)
    mesh_path = tmp_path / "mesh.obj"
    assert main(["reconstruct", "--input", str(cloud_path),
                 "--output", str(mesh_path), "--grid", "32"]) == 0
    capsys.readouterr()
    rc = main(["eval", str(mesh_path), str(mesh_path)])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["iou"] == 1.0
    assert report["chamfer_l2"] == 0.0
    assert set(report) == {"iou", "chamfer_l2", "normal_consistency",
                           "f_score", "seed", "volume_samples",
                           "surface_samples"}


def test_eval_output_file(tmp_path, capsys):
    cloud_path = tmp_path / "in.xyz"
    _write_sphere_xyz(cloud_path, n=200)
    mesh_path = tmp_path / "mesh.obj"
    assert main(["reconstruct", "--input", str(cloud_path),
                 "--output", str(mesh_path), "--grid", "24"]) == 0
    out = tmp_path / "report.json"
    rc = main(["eval", str(mesh_path), str(mesh_path),
               "--output", str(out)])
    assert rc == 0
    assert json.loads(out.read_text())["f_score"] == 1.0


def test_eval_unreadable_mesh_exits_two(tmp_path, capsys):
    junk = tmp_path / "junk.obj"
    junk.write_text("not a mesh\n")
    rc = main(["eval", str(junk), str(junk)])
    assert rc == 2


def test_benchmark_density_single_count(tmp_path, capsys):
    rc = main(["benchmark-density", "--points", "300", "--shapes", "1",
               "--grid", "32"])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "points,chamfer,iou"
    count, chamfer, iou = out[1].split(",")
    assert count == "300"
    assert 0.0 < float(chamfer) < 0.05
    assert 0.5 < float(iou) <= 1.0


def test_benchmark_density_output_file(tmp_path):
    out = tmp_path / "table.csv"
    rc = main(["benchmark-density", "--points", "300", "--shapes", "1",
               "--grid", "32", "--output", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "points,chamfer,iou"
    assert len(lines) == 2


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "kfields.cli", "--help"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("reconstruct", "train", "eval", "benchmark-density"):
        assert cmd in proc.stdout
