import hashlib
import subprocess
import sys

import pytest

from cvfusion.cli import main


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digest(root):
    return {p.relative_to(root).as_posix(): digest(p) for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scene = root / "scene"
    assert main(["synth-gen", "--out", str(scene), "--seed", "3", "--count", "2"]) == 0
    ckpt = root / "model.bin"
    assert main(["train-toy", "--out", str(ckpt), "--scene", str(scene), "--steps", "4", "--lr", "0.01"]) == 0
    return root, scene, ckpt


def test_synth_gen_layout(workspace):
    _, scene, _ = workspace
    for sub, ext in (("velodyne", "bin"), ("calib", "txt"), ("label_2", "txt"), ("features", "bin")):
        assert sorted(p.name for p in (scene / sub).iterdir()) == [f"000003.{ext}", f"000004.{ext}"]


def test_synth_gen_is_byte_identical(workspace, tmp_path):
    _, scene, _ = workspace
    assert main(["synth-gen", "--out", str(tmp_path / "again"), "--seed", "3", "--count", "2"]) == 0
    assert tree_digest(tmp_path / "again") == tree_digest(scene)


def test_train_toy_is_deterministic(workspace, tmp_path):
    _, scene, ckpt = workspace
    out = tmp_path / "m.bin"
    assert main(["train-toy", "--out", str(out), "--scene", str(scene), "--steps", "4", "--lr", "0.01"]) == 0
    assert digest(out) == digest(ckpt)


def test_detect_then_eval_pipeline(workspace, tmp_path, capsys):
    _, scene, ckpt = workspace
    pred = tmp_path / "pred"
    assert main(["detect", "--out", str(pred), "--scene", str(scene), "--checkpoint", str(ckpt)]) == 0
    assert sorted(p.name for p in pred.iterdir()) == ["000003.txt", "000004.txt"]
    for p in pred.iterdir():
        for row in p.read_text().splitlines():
            assert row.startswith("Car ") and len(row.split()) == 16
    report = tmp_path / "report.txt"
    assert main(["eval", "--out", str(report), "--scene", str(scene), "--pred", str(pred), "--iou", "0.7"]) == 0
    text = report.read_text()
    assert text.startswith("iou_threshold: 0.7000\n[all]\nap: ")
    assert "[40-70m]" in text
    # eval against the ground truth itself is perfect
    gt_report = tmp_path / "gt.txt"
    assert main(["eval", "--out", str(gt_report), "--scene", str(scene), "--pred", str(scene / "label_2"),
                 "--bins", "none"]) == 1  # ground-truth rows carry no score column
    assert "score" in capsys.readouterr().err


def test_detect_is_byte_identical(workspace, tmp_path):
    _, scene, ckpt = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["detect", "--out", str(out), "--scene", str(scene), "--checkpoint", str(ckpt)]) == 0
    assert tree_digest(a) == tree_digest(b)


def test_voxelize_and_fuse_outputs(workspace, tmp_path):
    _, scene, ckpt = workspace
    assert main(["voxelize", "--out", str(tmp_path / "occ.pgm"), "--scene", str(scene)]) == 0
    assert (tmp_path / "occ.pgm").read_bytes().startswith(b"P5\n352 200\n255\n")
    assert main(["fuse", "--out", str(tmp_path / "fuse"), "--scene", str(scene), "--checkpoint", str(ckpt)]) == 0
    assert sorted(p.name for p in (tmp_path / "fuse").iterdir()) == [
        "cam_attention.pgm", "joint.pgm", "lidar_attention.pgm",
    ]


def test_project_bev_changes_after_training(workspace, tmp_path):
    _, scene, ckpt = workspace
    before, after = tmp_path / "before.pgm", tmp_path / "after.pgm"
    assert main(["project-bev", "--out", str(before), "--scene", str(scene)]) == 0
    assert main(["project-bev", "--out", str(after), "--scene", str(scene), "--checkpoint", str(ckpt)]) == 0
    assert before.read_bytes()[:15] == after.read_bytes()[:15]  # same header
    assert digest(before) != digest(after)
    again = tmp_path / "again.pgm"
    assert main(["project-bev", "--out", str(again), "--scene", str(scene)]) == 0
    assert digest(again) == digest(before)


@pytest.mark.parametrize("argv", [
    ["voxelize", "--out", "x.pgm", "--scene", "/nonexistent/scene"],
    ["detect", "--out", "d", "--scene", "/nonexistent/scene", "--frame", "000000"],
    ["synth-gen", "--out", "s", "--config", "/nonexistent.cfg"],
    ["eval", "--out", "r.txt", "--scene", "/nonexistent", "--pred", "/nonexistent"],
])
def test_unreadable_paths_exit_nonzero(tmp_path, monkeypatch, capsys, argv):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_bad_bins_exit_nonzero(workspace, tmp_path):
    _, scene, _ = workspace
    assert main(["eval", "--out", str(tmp_path / "r"), "--scene", str(scene), "--pred", str(scene), "--bins", "40,20"]) == 1


def test_unknown_flag_exits_with_usage_error(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "cvfusion.cli", "voxelize", "--out", "x", "--scene", "y", "--bogus"],
        capture_output=True, text=True, cwd=tmp_path,
    )
    assert proc.returncode == 2 and "unrecognized arguments" in proc.stderr


def test_missing_required_flag():
    with pytest.raises(SystemExit) as info:
        main(["train-toy"])
    assert info.value.code == 2
