"""KITTI file formats: velodyne scans, calibration text, label text."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import Box3D, CalibrationSet, normalize_yaw


class ParseError(ValueError):
    """Malformed input; the message names the file and line or byte offset."""


# ---------------------------------------------------------------- velodyne

def read_velodyne_bin(path) -> np.ndarray:
    """[N,4] float64 (x, y, z, intensity) from little-endian float32 records."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        whole = len(raw) - len(raw) % 16
        raise ParseError(f"{path}: truncated record at byte offset {whole} (file is {len(raw)} bytes)")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
    return pts


def write_velodyne_bin(path, points: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(points).reshape(-1, 4), dtype="<f4")
    Path(path).write_bytes(arr.tobytes())


# ---------------------------------------------------------------- calibration

_CALIB_SHAPES = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_kitti_calib(text: str, source: str = "<calib>") -> CalibrationSet:
    found = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if ":" not in line:
            raise ParseError(f"{source}:{lineno}: expected 'key: values'")
        key, rest = line.split(":", 1)
        key = key.strip()
        try:
            vals = [float(v) for v in rest.split()]
        except ValueError:
            raise ParseError(f"{source}:{lineno}: non-numeric value in {key}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"{source}:{lineno}: non-finite value in {key}")
        if key in _CALIB_SHAPES:
            shape = _CALIB_SHAPES[key]
            if len(vals) != shape[0] * shape[1]:
                raise ParseError(f"{source}:{lineno}: {key} needs {shape[0] * shape[1]} values, got {len(vals)}")
            if key in found:
                raise ParseError(f"{source}:{lineno}: duplicate key {key}")
            found[key] = (np.array(vals).reshape(shape), lineno)
    for key in _CALIB_SHAPES:
        if key not in found:
            raise ParseError(f"{source}: missing key {key}")
    try:
        return CalibrationSet(found["P2"][0], found["R0_rect"][0], found["Tr_velo_to_cam"][0])
    except ValueError as exc:
        bad = "R0_rect" if "R0" in str(exc) else "Tr_velo_to_cam"
        raise ParseError(f"{source}:{found[bad][1]}: {exc}") from None


def read_kitti_calib(path) -> CalibrationSet:
    return parse_kitti_calib(Path(path).read_text(), str(path))


def format_kitti_calib(calib: CalibrationSet) -> str:
    def row(m):
        return " ".join(f"{v:.12e}" for v in np.asarray(m).reshape(-1))

    p0 = calib.P
    return (
        f"P0: {row(p0)}\nP1: {row(p0)}\nP2: {row(calib.P)}\nP3: {row(p0)}\n"
        f"R0_rect: {row(calib.R0)}\nTr_velo_to_cam: {row(calib.Tr)}\n"
        f"Tr_imu_to_velo: {row(np.hstack([np.eye(3), np.zeros((3, 1))]))}\n"
    )


def write_kitti_calib(path, calib: CalibrationSet) -> None:
    Path(path).write_text(format_kitti_calib(calib))


# ---------------------------------------------------------------- labels

@dataclass
class KittiObject:
    """One label row in camera coordinates (location is the bottom-face centre)."""

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple
    dimensions: tuple  # h, w, l
    location: tuple  # x, y, z (rect camera)
    rotation_y: float
    score: float | None = None


def parse_label_line(line: str, where: str) -> KittiObject:
    f = line.split()
    if len(f) not in (15, 16):
        raise ParseError(f"{where}: expected 15 or 16 fields, got {len(f)}")
    try:
        vals = [float(v) for v in f[1:]]
    except ValueError:
        raise ParseError(f"{where}: non-numeric field") from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(f"{where}: non-finite field")
    h, w, l = vals[7:10]
    if f[0] != "DontCare" and min(h, w, l) <= 0:
        raise ParseError(f"{where}: object dimensions must be positive")
    return KittiObject(
        f[0], vals[0], int(vals[1]), vals[2], tuple(vals[3:7]), (h, w, l), tuple(vals[10:13]), vals[13],
        vals[14] if len(vals) == 15 else None,
    )


def parse_kitti_labels(text: str, source: str = "<labels>") -> list[KittiObject]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        obj = parse_label_line(raw, f"{source}:{lineno}")
        if obj.type != "DontCare":
            out.append(obj)
    return out


def camera_to_lidar_box(obj: KittiObject, calib: CalibrationSet) -> Box3D:
    h, w, l = obj.dimensions
    bottom = np.asarray(obj.location, float)
    centre_rect = bottom - np.array([0.0, h / 2, 0.0])  # rect camera y points down
    centre = calib.rect_to_lidar(centre_rect[None])[0]
    heading_rect = np.array([math.cos(obj.rotation_y), 0.0, -math.sin(obj.rotation_y)])
    origin = calib.rect_to_lidar(np.zeros((1, 3)))[0]
    heading = calib.rect_to_lidar(heading_rect[None])[0] - origin
    yaw = math.atan2(heading[1], heading[0])
    return Box3D(centre[0], centre[1], centre[2], w, l, h, yaw, obj.type)


def lidar_to_camera_box(box: Box3D, calib: CalibrationSet):
    """Inverse of :func:`camera_to_lidar_box` -> (location, dimensions, rotation_y)."""
    centre_rect = calib.lidar_to_rect(box.center[None])[0]
    location = centre_rect + np.array([0.0, box.h / 2, 0.0])
    heading = calib.lidar_to_rect(np.array([[math.cos(box.yaw), math.sin(box.yaw), 0.0]]))[0]
    heading = heading - calib.lidar_to_rect(np.zeros((1, 3)))[0]
    ry = math.atan2(-heading[2], heading[0])
    return location, (box.h, box.w, box.l), float(normalize_yaw(ry))


def read_kitti_labels(path, calib: CalibrationSet, keep=("Car",)) -> list[Box3D]:
    """Boxes in the LiDAR frame; ``keep=None`` keeps every non-DontCare class."""
    objs = parse_kitti_labels(Path(path).read_text(), str(path))
    return [camera_to_lidar_box(o, calib) for o in objs if keep is None or o.type in keep]


def read_kitti_objects(path) -> list[KittiObject]:
    return parse_kitti_labels(Path(path).read_text(), str(path))


def image_bbox(box: Box3D, calib: CalibrationSet, image_size=None) -> tuple:
    from ..geometry import box_corners_3d

    uv, depth = calib.project(box_corners_3d(box))
    if np.any(depth <= 0):
        return (0.0, 0.0, 0.0, 0.0)
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    if image_size is not None:
        w, h = image_size
        x0, x1 = np.clip([x0, x1], 0, w - 1)
        y0, y1 = np.clip([y0, y1], 0, h - 1)
    return (float(x0), float(y0), float(x1), float(y1))


def format_label_row(box: Box3D, calib: CalibrationSet, score: float | None = None, image_size=None) -> str:
    loc, dims, ry = lidar_to_camera_box(box, calib)
    alpha = float(normalize_yaw(ry - math.atan2(loc[0], loc[2])))
    bbox = image_bbox(box, calib, image_size)
    fields = [box.label, "0.00", "0", f"{alpha:.6f}"]
    fields += [f"{v:.2f}" for v in bbox]
    fields += [f"{v:.6f}" for v in dims]
    fields += [f"{v:.6f}" for v in loc]
    fields.append(f"{ry:.6f}")
    if score is not None:
        fields.append(f"{score:.6f}")
    return " ".join(fields)


def write_kitti_labels(path, boxes, calib: CalibrationSet, scores=None, image_size=None) -> None:
    rows = [
        format_label_row(b, calib, None if scores is None else float(scores[i]), image_size)
        for i, b in enumerate(boxes)
    ]
    Path(path).write_text("".join(r + "\n" for r in rows))
