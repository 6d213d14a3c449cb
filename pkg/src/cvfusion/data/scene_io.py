"""Scene directories in a KITTI-like layout.

    <root>/velodyne/<frame>.bin   float32 x y z intensity records
    <root>/calib/<frame>.txt      P2 / R0_rect / Tr_velo_to_cam
    <root>/label_2/<frame>.txt    Car rows, plus Misc rows for clutter
    <root>/features/<frame>.bin   camera feature maps (parameter-checkpoint format)
    <root>/image_2/<frame>.ppm    optional decoded image for the stem path
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..geometry import Box3D
from ..imaging import read_pnm
from ..tensor import load_params, save_params
from .kitti import camera_to_lidar_box, read_kitti_calib, read_kitti_objects, read_velodyne_bin, write_kitti_calib, write_kitti_labels, write_velodyne_bin
from .synthetic import SceneSample

CLUTTER_TYPE = "Misc"


def frame_name(seed: int) -> str:
    return f"{seed:06d}"


def write_scene(root, frame: str, sample: SceneSample) -> None:
    root = Path(root)
    for sub in ("velodyne", "calib", "label_2", "features"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_velodyne_bin(root / "velodyne" / f"{frame}.bin", sample.points)
    calib = sample.calibs[0]
    write_kitti_calib(root / "calib" / f"{frame}.txt", calib)
    clutter = [Box3D.from_array(b.as_array(), CLUTTER_TYPE) for b in sample.distractors]
    write_kitti_labels(root / "label_2" / f"{frame}.txt", list(sample.gt_boxes) + clutter, calib, image_size=sample.image_size)
    feats = {f"camera{i}": f for i, f in enumerate(sample.camera_features)}
    feats["image_size"] = np.asarray(sample.image_size, dtype=np.float64)
    feats["feature_stride"] = np.asarray([sample.feature_stride])
    save_params(root / "features" / f"{frame}.bin", feats)


def list_frames(root) -> list[str]:
    velo = Path(root) / "velodyne"
    if not velo.is_dir():
        raise FileNotFoundError(f"{root}: no velodyne/ directory")
    return sorted(p.stem for p in velo.glob("*.bin"))


def read_scene(root, frame: str) -> SceneSample:
    """Load one frame. Camera features come from features/ when present; a
    PPM/PGM under image_2/ is attached for the image-stem path."""
    root = Path(root)
    points = read_velodyne_bin(root / "velodyne" / f"{frame}.bin")
    calib = read_kitti_calib(root / "calib" / f"{frame}.txt")
    gts, clutter = [], []
    label_path = root / "label_2" / f"{frame}.txt"
    if label_path.exists():
        for obj in read_kitti_objects(label_path):
            if obj.type == "Car":
                gts.append(camera_to_lidar_box(obj, calib))
            elif obj.type == CLUTTER_TYPE:
                clutter.append(camera_to_lidar_box(obj, calib))
    image_size, stride, cams = (1280, 384), 8.0, []
    feat_path = root / "features" / f"{frame}.bin"
    if feat_path.exists():
        stored = load_params(feat_path)
        image_size = tuple(int(v) for v in stored.pop("image_size", np.array(image_size)))
        stride = float(stored.pop("feature_stride", np.array([stride]))[0])
        cams = [stored[k] for k in sorted(stored, key=lambda k: int(k[len("camera"):]))]
    images = None
    for ext in ("ppm", "pgm"):
        p = root / "image_2" / f"{frame}.{ext}"
        if p.exists():
            images = [read_pnm(p)]
            image_size = (images[0].shape[1], images[0].shape[0])
            break
    if not cams and images is None:
        raise FileNotFoundError(f"{root}: frame {frame} has neither features/ nor image_2/ camera data")
    return SceneSample(points, [calib], cams, gts, clutter, image_size, stride, frame, camera_images=images)
