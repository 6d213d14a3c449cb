import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvfusion.data.augment import AugmentDraw, apply_augmentation, augment, draw_augmentation
from cvfusion.data.config import AugmentConfig, ConfigError, RunConfig, bundled_configs, load_config, parse_config
from cvfusion.data.kitti import (
    ParseError,
    camera_to_lidar_box,
    lidar_to_camera_box,
    parse_kitti_labels,
    read_kitti_calib,
    read_kitti_labels,
    read_kitti_objects,
    read_velodyne_bin,
    write_kitti_calib,
    write_kitti_labels,
    write_velodyne_bin,
)
from cvfusion.data.scene_io import list_frames, read_scene, write_scene
from cvfusion.data.synthetic import SynthConfig, generate_synthetic_scene
from cvfusion.geometry import Box3D, bev_iou, points_in_box
from malformed import CASES, GOOD_CALIB, GOOD_ROW


# ---------------------------------------------------------------- velodyne

def test_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(np.array([1.0, 2.0, 3.0, 0.5], "<f4").tobytes())
    assert read_velodyne_bin(p).tolist() == [[1.0, 2.0, 3.0, 0.5]]


def test_empty_file(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    assert read_velodyne_bin(p).shape == (0, 4)


def test_velodyne_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.normal(0, 20, (1000, 3)), rng.uniform(0, 1, 1000)]).astype("<f4")
    p = tmp_path / "scan.bin"
    write_velodyne_bin(p, pts)
    assert p.read_bytes() == pts.tobytes()
    back = read_velodyne_bin(p)
    assert back.astype("<f4").tobytes() == pts.tobytes()
    write_velodyne_bin(tmp_path / "again.bin", back)
    assert (tmp_path / "again.bin").read_bytes() == p.read_bytes()


@pytest.mark.parametrize("extra", [1, 7, 15])
def test_truncated_scan_names_byte_offset(tmp_path, extra):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\0" * (32 + extra))
    with pytest.raises(ParseError, match="byte offset 32"):
        read_velodyne_bin(p)


# ---------------------------------------------------------------- calibration + labels

def test_identity_calibration(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(GOOD_CALIB)
    calib = read_kitti_calib(p)
    np.testing.assert_array_equal(calib.P, np.hstack([np.eye(3), np.zeros((3, 1))]))
    np.testing.assert_array_equal(calib.R0, np.eye(3))
    np.testing.assert_array_equal(calib.Tr, np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_calibration_write_read(tmp_path):
    calib = generate_synthetic_scene(0).calibs[0]
    write_kitti_calib(tmp_path / "c.txt", calib)
    back = read_kitti_calib(tmp_path / "c.txt")
    for a, b in ((calib.P, back.P), (calib.R0, back.R0), (calib.Tr, back.Tr)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_dontcare_rows_skipped():
    text = GOOD_ROW + "\nDontCare -1 -1 -10 1 2 3 4 -1 -1 -1 -1000 -1000 -1000 -10\n" + GOOD_ROW
    objs = parse_kitti_labels(text)
    assert [o.type for o in objs] == ["Car", "Car"]


def test_label_row_fields():
    obj = parse_kitti_labels(GOOD_ROW)[0]
    assert obj.dimensions == (1.5, 1.6, 3.9) and obj.location == (1.0, 1.7, 12.0)
    assert obj.rotation_y == 0.1 and obj.score is None
    assert parse_kitti_labels(GOOD_ROW + " 0.25")[0].score == 0.25


def test_camera_lidar_box_round_trip():
    calib = generate_synthetic_scene(0).calibs[0]
    rng = np.random.default_rng(0)
    for _ in range(200):
        box = Box3D(rng.uniform(5, 60), rng.uniform(-15, 15), rng.uniform(-2, 0), rng.uniform(1.4, 2),
                    rng.uniform(3, 5), rng.uniform(1.3, 1.8), rng.uniform(-math.pi, math.pi))
        loc, dims, ry = lidar_to_camera_box(box, calib)
        loc, dims = [float(v) for v in loc], [float(v) for v in dims]
        obj = parse_kitti_labels(
            f"Car 0 0 0 0 0 0 0 {dims[0]!r} {dims[1]!r} {dims[2]!r} {loc[0]!r} {loc[1]!r} {loc[2]!r} {ry!r}"
        )[0]
        back = camera_to_lidar_box(obj, calib)
        np.testing.assert_allclose(back.as_array()[:6], box.as_array()[:6], atol=1e-6)
        assert abs(math.remainder(back.yaw - box.yaw, 2 * math.pi)) < 1e-6


def test_label_file_round_trip_within_1e6(tmp_path):
    sample = generate_synthetic_scene(3, 4)
    calib = sample.calibs[0]
    write_kitti_labels(tmp_path / "l.txt", sample.gt_boxes, calib, image_size=sample.image_size)
    back = read_kitti_labels(tmp_path / "l.txt", calib)
    assert len(back) == 4
    for a, b in zip(sample.gt_boxes, back):
        np.testing.assert_allclose(b.as_array()[:6], a.as_array()[:6], atol=1e-5)
        assert abs(math.remainder(b.yaw - a.yaw, 2 * math.pi)) < 1e-5


@pytest.mark.parametrize("kind,name,text,where", CASES, ids=[c[1] for c in CASES])
def test_malformed_files_rejected_with_position(tmp_path, kind, name, text, where):
    path = tmp_path / f"{name}.txt"
    path.write_text(text)
    reader = read_kitti_calib if kind == "calib" else read_kitti_objects
    with pytest.raises(ParseError) as info:
        reader(path)
    msg = str(info.value)
    assert str(path) in msg and where in msg


def test_twenty_curated_cases():
    assert len(CASES) == 20 and len({c[1] for c in CASES}) == 20


# ---------------------------------------------------------------- synthetic scenes

def test_empty_scene_is_ground_only():
    s = generate_synthetic_scene(5, 0)
    assert s.gt_boxes == [] and len(s.points) > 0
    assert np.all(np.abs(s.points[:, 2] + 1.73) < 0.2)


def test_generation_is_deterministic():
    a, b = generate_synthetic_scene(11, 3), generate_synthetic_scene(11, 3)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.camera_features[0].tobytes() == b.camera_features[0].tobytes()
    assert generate_synthetic_scene(12, 3).points.tobytes() != a.points.tobytes()


def test_negative_object_count_rejected():
    with pytest.raises(ValueError):
        generate_synthetic_scene(0, -1)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_boxes_never_overlap(seed):
    cfg = SynthConfig(n_distractors=2)
    s = generate_synthetic_scene(seed, 5, cfg=cfg)
    boxes = s.gt_boxes + s.distractors
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert bev_iou(boxes[i], boxes[j]) == 0.0


def test_near_boxes_get_at_least_50_points():
    cfg = SynthConfig(x_range=(5.0, 19.0), y_limit=6.0)
    counts = []
    for seed in range(30):
        s = generate_synthetic_scene(seed, 2, cfg=cfg)
        for b in s.gt_boxes:
            assert math.hypot(b.x, b.y) < 20
            counts.append(int(points_in_box(s.points, replace(b, w=b.w + 0.2, l=b.l + 0.2, h=b.h + 0.2)).sum()))
    assert min(counts) >= 50


def test_sparse_far_field_thins_points():
    dense = SynthConfig(x_range=(45.0, 60.0), y_limit=5.0)
    sparse = replace(dense, sparse_beyond=40.0, sparse_factor=0.15)

    def on_objects(cfg):
        total = 0
        for seed in range(5):
            s = generate_synthetic_scene(seed, 2, cfg=cfg)
            total += sum(int(points_in_box(s.points, b, margin=0.1).sum()) for b in s.gt_boxes)
        return total

    a, b = on_objects(dense), on_objects(sparse)
    assert 0.05 * a < b < 0.3 * a


def test_camera_signature_marks_cars():
    s = generate_synthetic_scene(2, 3)
    feat = s.camera_features[0]
    assert feat.shape == (4, 48, 160)
    for b in s.gt_boxes:
        uv, depth = s.calibs[0].project(b.center[None])
        col, row = (uv[0] / 8).astype(int)
        if depth[0] > 0 and 0 <= col < 160 and 0 <= row < 48:
            assert feat[0, row, col] > 0.5


def test_scene_directory_round_trip(tmp_path):
    s = generate_synthetic_scene(4, 3, cfg=SynthConfig(n_distractors=1))
    write_scene(tmp_path, "000004", s)
    assert list_frames(tmp_path) == ["000004"]
    back = read_scene(tmp_path, "000004")
    assert back.points.astype("<f4").tobytes() == s.points.astype("<f4").tobytes()
    assert back.camera_features[0].tobytes() == s.camera_features[0].tobytes()
    assert len(back.gt_boxes) == 3 and len(back.distractors) == 1
    for a, b in zip(s.gt_boxes, back.gt_boxes):
        np.testing.assert_allclose(b.as_array()[:6], a.as_array()[:6], atol=1e-5)


# ---------------------------------------------------------------- augmentation

def _cloud_with_members(seed):
    s = generate_synthetic_scene(seed, 3)
    members = [points_in_box(s.points, b, margin=0.05) for b in s.gt_boxes]
    return s, members


def test_identity_draw_leaves_sample_unchanged():
    s, _ = _cloud_with_members(0)
    out = apply_augmentation(s, AugmentDraw(False, 0.0, 1.0))
    assert out.points.tobytes() == s.points.tobytes()
    assert out.gt_array.tobytes() == s.gt_array.tobytes()
    assert out.calibs[0] is s.calibs[0]


@pytest.mark.parametrize("seed", range(8))
def test_boxes_still_enclose_their_points(seed):
    s, members = _cloud_with_members(seed)
    out = augment(s, seed)
    for b, m in zip(out.gt_boxes, members):
        assert points_in_box(out.points[m], b, margin=0.05 * 1.06).all()


def test_projection_preserved_by_augmentation():
    s, _ = _cloud_with_members(1)
    out = apply_augmentation(s, AugmentDraw(True, 0.3, 1.0))
    uv0, _ = s.calibs[0].project(s.points[:, :3])
    uv1, _ = out.calibs[0].project(out.points[:, :3])
    np.testing.assert_allclose(uv1, uv0, atol=1e-8)


def test_rotation_draws_within_bounds_over_10k_seeds():
    angles = np.array([draw_augmentation(s).angle for s in range(10_000)])
    scales = np.array([draw_augmentation(s).scale for s in range(2000)])
    assert angles.min() >= -math.pi / 4 and angles.max() <= math.pi / 4
    assert angles.min() < -0.7 and angles.max() > 0.7
    assert scales.min() >= 0.95 and scales.max() <= 1.05


def test_flip_can_be_disabled():
    assert not any(draw_augmentation(s, AugmentConfig(flip=False)).flip for s in range(200))


# ---------------------------------------------------------------- config

def test_default_constants():
    cfg = RunConfig()
    assert cfg.proposal.nms_iou == 0.7
    assert (cfg.loss.beta1, cfg.loss.beta2, cfg.loss.alpha, cfg.loss.gamma) == (1.0, 2.0, 0.25, 2.0)
    assert cfg.voxel_spec().dims == (1408, 1600, 40)


def test_bundled_configs_parse():
    assert {"desk", "kitti"} <= set(bundled_configs())
    desk = load_config("desk")
    assert desk.voxel_spec().dims == (352, 200, 8) and desk.voxel_spec().bev_shape == (25, 44)
    assert load_config("kitti").voxel_spec().dims == (1408, 1600, 40)


def test_config_text_round_trip():
    cfg = load_config("desk")
    back = parse_config(cfg.to_text())
    assert back == cfg


@pytest.mark.parametrize("text,where", [
    ("voxel.size = 0.1, abc, 0.1", ":1:"),
    ("\n\nnetwork.bogus = 3", ":3:"),
    ("nonsense line", ":1:"),
    ("camera.enabled = maybe", ":1:"),
    ("train.steps = 1.5", ":1:"),
    ("a.b.c = 1", ":1:"),
])
def test_config_errors_are_positioned(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text, source="x.cfg")


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.cfg")
