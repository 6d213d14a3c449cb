"""Frames, projection, oriented boxes, rotated IoU and residual coding.

Conventions (LiDAR frame): x forward, y left, z up. A box's ``l`` runs along
its heading (yaw measured from +x towards +y), ``w`` across it, and ``z`` is
the geometric centre, not the bottom face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_yaw(yaw):
    """Wrap into [-pi, pi); +pi maps to -pi."""
    return (np.asarray(yaw, dtype=np.float64) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    w: float
    l: float  # noqa: E741
    h: float
    yaw: float = 0.0
    label: str = "Car"

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box sizes must be positive, got w={self.w} l={self.l} h={self.h}")
        object.__setattr__(self, "yaw", float(normalize_yaw(self.yaw)))

    @classmethod
    def from_array(cls, arr, label: str = "Car") -> "Box3D":
        x, y, z, w, l, h, yaw = (float(v) for v in arr)
        return cls(x, y, z, w, l, h, yaw, label)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w, self.l, self.h, self.yaw])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h


def boxes_to_array(boxes: Sequence) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.as_array() if isinstance(b, Box3D) else np.asarray(b, float) for b in boxes])


def _rot2(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def bev_corners(box) -> np.ndarray:
    """Four BEV corners, counter-clockwise, shape [4, 2]."""
    b = box.as_array() if isinstance(box, Box3D) else np.asarray(box, float)
    half = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * [b[4] / 2, b[3] / 2]
    return half @ _rot2(b[6]).T + b[:2]


def box_corners_3d(box) -> np.ndarray:
    """Eight corners [8, 3]: bottom face then top face."""
    b = box.as_array() if isinstance(box, Box3D) else np.asarray(box, float)
    c2 = bev_corners(b)
    lo = np.column_stack([c2, np.full(4, b[2] - b[5] / 2)])
    hi = np.column_stack([c2, np.full(4, b[2] + b[5] / 2)])
    return np.vstack([lo, hi])


def box_local_to_world(box, local: np.ndarray) -> np.ndarray:
    """Map box-frame offsets [N,3] (along-heading, across, up) to world points."""
    b = box.as_array() if isinstance(box, Box3D) else np.asarray(box, float)
    local = np.asarray(local, float)
    xy = local[:, :2] @ _rot2(b[6]).T + b[:2]
    return np.column_stack([xy, local[:, 2] + b[2]])


def points_in_box(points: np.ndarray, box, margin: float = 0.0) -> np.ndarray:
    b = box.as_array() if isinstance(box, Box3D) else np.asarray(box, float)
    rel = np.asarray(points, float)[:, :2] - b[:2]
    c, s = math.cos(b[6]), math.sin(b[6])
    along = rel[:, 0] * c + rel[:, 1] * s
    across = -rel[:, 0] * s + rel[:, 1] * c
    dz = np.asarray(points, float)[:, 2] - b[2]
    return (
        (np.abs(along) <= b[4] / 2 + margin)
        & (np.abs(across) <= b[3] / 2 + margin)
        & (np.abs(dz) <= b[5] / 2 + margin)
    )


# ---------------------------------------------------------------- rotated IoU

def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    out = _clip([tuple(map(float, p)) for p in subject], [tuple(map(float, p)) for p in clip])
    return np.array(out).reshape(-1, 2)


def _clip(subject: list, clip: list) -> list:
    out = subject
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        px, py = inp[-1]
        sp = ex * (py - ay) - ey * (px - ax)
        for cx, cy in inp:
            sc = ex * (cy - ay) - ey * (cx - ax)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((px + t * (cx - px), py + t * (cy - py)))
                out.append((cx, cy))
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((px + t * (cx - px), py + t * (cy - py)))
            px, py, sp = cx, cy, sc
    return out


def _corner_list(b) -> list:
    """bev_corners as a list of float pairs; the IoU kernels below run in
    plain floats because numpy overhead dominates on four-vertex polygons."""
    c, s = math.cos(b[6]), math.sin(b[6])
    hl, hw = b[4] / 2, b[3] / 2
    return [(b[0] + (px * c - py * s), b[1] + (px * s + py * c))
            for px, py in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def _area(pts: list) -> float:
    if len(pts) < 3:
        return 0.0
    acc = 0.0
    px, py = pts[-1]
    for x, y in pts:
        acc += px * y - py * x
        px, py = x, y
    return 0.5 * abs(acc)


def _box_tuple(a) -> tuple:
    a = a.as_array() if isinstance(a, Box3D) else a
    return tuple(float(v) for v in a[:7])


def _intersection(a: tuple, b: tuple) -> float:
    reach = 0.5 * (math.hypot(a[3], a[4]) + math.hypot(b[3], b[4]))
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= reach:
        return 0.0
    return _area(_clip(_corner_list(a), _corner_list(b)))


def bev_intersection(a, b) -> float:
    return _intersection(_box_tuple(a), _box_tuple(b))


def bev_iou(a, b) -> float:
    return bev_iou_tuples(_box_tuple(a), _box_tuple(b))


def bev_iou_tuples(a: tuple, b: tuple) -> float:
    """bev_iou on boxes already given as 7-tuples of floats."""
    # order the pair canonically so iou(a, b) == iou(b, a) bit for bit
    if b < a:
        a, b = b, a
    if a == b:
        return 1.0  # clipping round-off would give 1 - few ulp
    inter = _intersection(a, b)
    union = a[3] * a[4] + b[3] * b[4] - inter
    return 0.0 if union <= 0 or inter <= 0 else min(1.0, inter / union)


def iou_3d(a, b) -> float:
    a, b = _box_tuple(a), _box_tuple(b)
    if b < a:
        a, b = b, a
    if a == b:
        return 1.0
    dz = min(a[2] + a[5] / 2, b[2] + b[5] / 2) - max(a[2] - a[5] / 2, b[2] - b[5] / 2)
    if dz <= 0:
        return 0.0
    inter = _intersection(a, b) * dz
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    return 0.0 if union <= 0 or inter <= 0 else min(1.0, inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray, kind: str = "bev") -> np.ndarray:
    """Pairwise IoU [len(a), len(b)]; pairs too far apart to touch are skipped."""
    a, b = boxes_to_array(a), boxes_to_array(b)
    out = np.zeros((len(a), len(b)))
    if len(a) == 0 or len(b) == 0:
        return out
    fn = bev_iou if kind == "bev" else iou_3d
    ra = 0.5 * np.hypot(a[:, 3], a[:, 4])
    rb = 0.5 * np.hypot(b[:, 3], b[:, 4])
    dist = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    for i, j in zip(*np.nonzero(dist < ra[:, None] + rb[None, :])):
        out[i, j] = fn(a[i], b[j])
    return out


# ---------------------------------------------------------------- residual coding

def encode_box_residual(gt, anchor) -> np.ndarray:
    g = gt.as_array() if isinstance(gt, Box3D) else np.asarray(gt, float)
    a = anchor.as_array() if isinstance(anchor, Box3D) else np.asarray(anchor, float)
    return encode_residuals(g[None], a[None])[0]


def decode_box_residual(res, anchor) -> Box3D:
    a = anchor.as_array() if isinstance(anchor, Box3D) else np.asarray(anchor, float)
    label = anchor.label if isinstance(anchor, Box3D) else "Car"
    return Box3D.from_array(decode_residuals(np.asarray(res, float)[None], a[None])[0], label)


def encode_residuals(gt: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Vectorised [N,7] residuals of gt boxes against anchors."""
    gt, anchors = np.asarray(gt, float), np.asarray(anchors, float)
    if np.any(anchors[:, 3:6] <= 0):
        raise ValueError("anchor sizes must be positive")
    diag = np.hypot(anchors[:, 3], anchors[:, 4])
    return np.column_stack(
        [
            (gt[:, 0] - anchors[:, 0]) / diag,
            (gt[:, 1] - anchors[:, 1]) / diag,
            (gt[:, 2] - anchors[:, 2]) / anchors[:, 5],
            np.log(gt[:, 3] / anchors[:, 3]),
            np.log(gt[:, 4] / anchors[:, 4]),
            np.log(gt[:, 5] / anchors[:, 5]),
            gt[:, 6] - anchors[:, 6],
        ]
    )


def decode_residuals(res: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    res, anchors = np.asarray(res, float), np.asarray(anchors, float)
    if np.any(anchors[:, 3:6] <= 0):
        raise ValueError("anchor sizes must be positive")
    diag = np.hypot(anchors[:, 3], anchors[:, 4])
    return np.column_stack(
        [
            anchors[:, 0] + res[:, 0] * diag,
            anchors[:, 1] + res[:, 1] * diag,
            anchors[:, 2] + res[:, 2] * anchors[:, 5],
            anchors[:, 3] * np.exp(res[:, 3]),
            anchors[:, 4] * np.exp(res[:, 4]),
            anchors[:, 5] * np.exp(res[:, 5]),
            normalize_yaw(anchors[:, 6] + res[:, 6]),
        ]
    )


# ---------------------------------------------------------------- calibration / projection

def _is_orthonormal(m: np.ndarray, tol: float = 1e-4) -> bool:
    return bool(np.allclose(m @ m.T, np.eye(3), atol=tol))


@dataclass(frozen=True)
class CalibrationSet:
    """KITTI-style camera calibration: pixel = P @ R0 @ Tr @ p_lidar."""

    P: np.ndarray
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))
    Tr: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))
    check: bool = True

    def __post_init__(self):
        for name, shape in (("P", (3, 4)), ("R0", (3, 3)), ("Tr", (3, 4))):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"calibration {name} must be {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.check:
            if not _is_orthonormal(self.R0):
                raise ValueError("R0 is not orthonormal")
            if not _is_orthonormal(self.Tr[:, :3]):
                raise ValueError("Tr rotation block is not orthonormal")

    def lidar_to_rect(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)[..., :3]
        return (pts @ self.Tr[:, :3].T + self.Tr[:, 3]) @ self.R0.T

    def rect_to_lidar(self, pts: np.ndarray) -> np.ndarray:
        cam = np.asarray(pts, float) @ self.R0  # R0^-1 = R0^T for rotations
        return np.linalg.solve(self.Tr[:, :3], (cam - self.Tr[:, 3]).T).T

    def rect_to_pixels(self, rect: np.ndarray):
        hom = rect @ self.P[:, :3].T + self.P[:, 3]
        depth = rect[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = hom[..., :2] / hom[..., 2:3]
        return uv, depth

    def project(self, pts: np.ndarray):
        """Vectorised projection: (uv [N,2], depth [N]); uv is meaningless where depth <= 0."""
        return self.rect_to_pixels(self.lidar_to_rect(pts))

    def __eq__(self, other):
        return (
            isinstance(other, CalibrationSet)
            and np.array_equal(self.P, other.P)
            and np.array_equal(self.R0, other.R0)
            and np.array_equal(self.Tr, other.Tr)
        )

    __hash__ = None


@dataclass(frozen=True)
class PixelCoord:
    x: float
    y: float
    depth: float


def project_to_image(p, calib: CalibrationSet) -> PixelCoord | None:
    """Project one LiDAR-frame point; ``None`` means the point is behind the camera."""
    p = np.asarray(p, float)
    if not np.all(np.isfinite(p[:3])):
        raise ValueError("point must be finite")
    uv, depth = calib.project(p[None, :3])
    if depth[0] <= 0:
        return None
    return PixelCoord(float(uv[0, 0]), float(uv[0, 1]), float(depth[0]))


# ---------------------------------------------------------------- augmentation transforms

@dataclass(frozen=True)
class Flip:
    """Mirror about the x axis (y -> -y)."""

    def matrix(self) -> np.ndarray:
        return np.diag([1.0, -1.0, 1.0])


@dataclass(frozen=True)
class Rotate:
    angle: float

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Scale:
    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError(f"scale factor must be positive, got {self.factor}")

    def matrix(self) -> np.ndarray:
        return np.eye(3) * self.factor


def transform_cloud(points: np.ndarray, op) -> np.ndarray:
    """Apply ``op`` to xyz columns; extra columns (intensity) pass through."""
    points = np.asarray(points, float)
    out = points.copy()
    out[:, :3] = points[:, :3] @ op.matrix().T
    return out


def adjust_calibration(calib: CalibrationSet, op) -> CalibrationSet:
    """Calibration under which transformed points project where the originals did.

    Exact for the rigid ops (Flip, Rotate). A Scale leaves the calibration
    unchanged: with ``t = R0 @ Tr[:, 3]``, a scaled point lands at rect-camera
    position ``s * c + (1 - s) * t``, see :func:`scaled_rect_position`.
    """
    if isinstance(op, Scale):
        return calib
    inv = np.linalg.inv(op.matrix())
    tr = np.hstack([calib.Tr[:, :3] @ inv, calib.Tr[:, 3:]])
    return CalibrationSet(calib.P, calib.R0, tr, check=calib.check)


def scaled_rect_position(calib: CalibrationSet, point: np.ndarray, factor: float) -> np.ndarray:
    """Rect-camera coordinates of ``factor * point`` expressed via the unscaled point."""
    c = calib.lidar_to_rect(np.asarray(point, float)[None])[0]
    t = calib.R0 @ calib.Tr[:, 3]
    return factor * c + (1.0 - factor) * t


def transform_boxes(boxes: np.ndarray, op) -> np.ndarray:
    """Transform [N,7] boxes consistently with :func:`transform_cloud`."""
    boxes = np.array(boxes, dtype=float).reshape(-1, 7)
    out = boxes.copy()
    out[:, :3] = boxes[:, :3] @ op.matrix().T
    if isinstance(op, Flip):
        out[:, 6] = -boxes[:, 6]
    elif isinstance(op, Rotate):
        out[:, 6] = boxes[:, 6] + op.angle
    elif isinstance(op, Scale):
        out[:, 3:6] = boxes[:, 3:6] * op.factor
    out[:, 6] = normalize_yaw(out[:, 6])
    return out
