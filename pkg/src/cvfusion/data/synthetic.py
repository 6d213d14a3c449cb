"""Synthetic camera+LiDAR scenes with known boxes.

LiDAR returns are drawn on the sensor-facing faces of each object and on a
flat ground plane, with density falling off as 1/r^2 (optionally thinned
further beyond ``sparse_beyond``). The camera side is a ready-made feature
map at the backbone stride: car pixels light channel 0, clutter objects
light channel 1, and the remaining channels carry noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import Box3D, CalibrationSet, bev_iou, box_corners_3d, boxes_to_array, points_in_box
from .config import SynthConfig

SENSOR_HEIGHT = 1.73
GROUND_Z = -SENSOR_HEIGHT
CAMERA_CHANNELS = 4


@dataclass
class SceneSample:
    points: np.ndarray  # [N,4]
    calibs: list
    camera_features: list  # per camera [C, H_f, W_f] arrays
    gt_boxes: list  # Box3D, LiDAR frame
    distractors: list = field(default_factory=list)
    image_size: tuple = (1280, 384)
    feature_stride: float = 8.0
    name: str = ""
    out_of_range: list = field(default_factory=list)
    camera_images: list | None = None  # uint8 images for the stem path

    def __post_init__(self):
        if not self.calibs:
            raise ValueError("a scene needs at least one camera calibration")

    @property
    def gt_array(self) -> np.ndarray:
        return boxes_to_array(self.gt_boxes)


def default_calibration(cfg: SynthConfig) -> CalibrationSet:
    """Forward-looking camera a little behind and below the LiDAR."""
    w, h = cfg.image_size
    f = cfg.focal
    p = np.array([[f, 0, w / 2, 0], [0, f, h / 2, 0], [0, 0, 1, 0]], dtype=float)
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    tr = np.hstack([rot, np.array([[0.0], [-0.08], [-0.27]])])
    return CalibrationSet(p, np.eye(3), tr)


def _density(r, cfg: SynthConfig, base: float) -> np.ndarray:
    r = np.maximum(np.asarray(r, float), 1.0)
    d = base * (10.0 / r) ** 2
    return np.where(r > cfg.sparse_beyond, d * cfg.sparse_factor, d)


def _visible_faces(box: Box3D):
    """(centre, u-axis, v-axis) of faces whose outward normal faces the sensor."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    fwd = np.array([c, s, 0.0])
    left = np.array([-s, c, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    centre = box.center
    faces = [
        (fwd, box.l / 2, left * box.w / 2, up * box.h / 2),
        (-fwd, box.l / 2, left * box.w / 2, up * box.h / 2),
        (left, box.w / 2, fwd * box.l / 2, up * box.h / 2),
        (-left, box.w / 2, fwd * box.l / 2, up * box.h / 2),
        (up, box.h / 2, fwd * box.l / 2, left * box.w / 2),
    ]
    out = []
    for normal, dist, u, v in faces:
        fc = centre + normal * dist
        if np.dot(normal, fc) < 0:  # sensor at origin
            out.append((fc, u, v))
    return out


def sample_surface(box: Box3D, rng, cfg: SynthConfig, intensity=(0.3, 0.8), jitter: float = 0.02) -> np.ndarray:
    pts = []
    r = math.hypot(box.x, box.y)
    dens = float(_density(r, cfg, cfg.density))
    for fc, u, v in _visible_faces(box):
        area = 4 * np.linalg.norm(u) * np.linalg.norm(v)
        n = rng.poisson(dens * area)
        if n == 0:
            continue
        a = rng.uniform(-1, 1, (n, 2))
        p = fc + a[:, :1] * u + a[:, 1:] * v + rng.normal(0, jitter, (n, 3))
        pts.append(np.column_stack([p, rng.uniform(*intensity, n)]))
    return np.vstack(pts) if pts else np.zeros((0, 4))


def sample_clutter(box: Box3D, rng, cfg: SynthConfig) -> np.ndarray:
    """Bush-like blob: points scattered through the volume, biased to the near side."""
    r = math.hypot(box.x, box.y)
    dens = float(_density(r, cfg, cfg.density))
    n = rng.poisson(dens * (box.w * box.l + box.w * box.h))
    if n == 0:
        return np.zeros((0, 4))
    u = rng.uniform(-0.5, 0.5, (n, 3)) * [box.l, box.w, box.h]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    xy = u[:, :2] @ np.array([[c, s], [-s, c]]) + [box.x, box.y]
    return np.column_stack([xy, u[:, 2] + box.z, rng.uniform(0.05, 0.5, n)])


def sample_ground(rng, cfg: SynthConfig, x_max: float, y_lim: float) -> np.ndarray:
    r_min, r_max = 2.5, math.hypot(x_max, y_lim)
    # density ~ 1/r^2 over an annulus => radius pdf ~ 1/r
    half = math.pi / 2
    expected = cfg.ground_density * 100.0 * (2 * half) * math.log(r_max / r_min)
    n = rng.poisson(expected)
    r = r_min * (r_max / r_min) ** rng.uniform(0, 1, n)
    th = rng.uniform(-half, half, n)
    keep = rng.uniform(0, 1, n) < np.where(r > cfg.sparse_beyond, cfg.sparse_factor, 1.0)
    r, th = r[keep], th[keep]
    x, y = r * np.cos(th), r * np.sin(th)
    z = GROUND_Z + rng.normal(0, 0.03, len(x))
    return np.column_stack([x, y, z, rng.uniform(0.05, 0.3, len(x))])


def _random_box(rng, cfg: SynthConfig, kind: str) -> Box3D:
    for _ in range(1000):
        x = rng.uniform(*cfg.x_range)
        y = rng.uniform(-cfg.y_limit, cfg.y_limit)
        if abs(math.degrees(math.atan2(y, x))) > cfg.fov_deg:
            continue
        if kind == "car":
            w, l, h = rng.uniform(1.5, 1.8), rng.uniform(3.6, 4.4), rng.uniform(1.4, 1.7)
        else:
            w, l, h = rng.uniform(0.8, 2.0), rng.uniform(0.8, 2.0), rng.uniform(0.8, 1.6)
        return Box3D(x, y, GROUND_Z + h / 2, w, l, h, rng.uniform(-math.pi, math.pi), "Car" if kind == "car" else "Clutter")
    raise RuntimeError("could not place an object")


def _place(rng, cfg: SynthConfig, n: int, kind: str, taken: list) -> list:
    out = []
    while len(out) < n:
        b = _random_box(rng, cfg, kind)
        # keep a margin so boxes are clearly separate in BEV
        grown = replace(b, w=b.w + 0.6, l=b.l + 0.6)
        if all(bev_iou(grown, o) == 0.0 for o in taken):
            taken.append(b)
            out.append(b)
    return out


def render_camera_features(objects: list, calib: CalibrationSet, cfg: SynthConfig, rng, stride: float = 8.0):
    w_img, h_img = cfg.image_size
    fh, fw = int(h_img // stride), int(w_img // stride)
    feat = np.zeros((CAMERA_CHANNELS, fh, fw))
    if cfg.camera_mode == "none":
        return feat
    if cfg.camera_mode == "noise":
        return rng.normal(0.0, 1.0, feat.shape)
    cols = np.arange(fw)
    rows = np.arange(fh)
    # far to near so nearer objects overwrite
    order = sorted(objects, key=lambda b: -math.hypot(b.x, b.y))
    for box in order:
        uv, depth = calib.project(box_corners_3d(box))
        if np.any(depth <= 0):
            continue
        x0, y0 = uv.min(axis=0) / stride
        x1, y1 = uv.max(axis=0) / stride
        cx = np.clip(np.minimum(cols + 0.5, x1) - np.maximum(cols - 0.5, x0), 0, 1)
        cy = np.clip(np.minimum(rows + 0.5, y1) - np.maximum(rows - 0.5, y0), 0, 1)
        cover = (cy[:, None] * cx[None, :]) > 0
        ch = 0 if box.label == "Car" else 1
        feat[0][cover] = 0.0
        feat[1][cover] = 0.0
        feat[ch][cover] = 1.0
    feat[2:] = rng.normal(0.0, 1.0, feat[2:].shape) * 0.5
    if cfg.camera_noise > 0:
        feat[:2] += rng.normal(0.0, cfg.camera_noise, feat[:2].shape)
    return feat


def generate_synthetic_scene(seed: int, n_objects: int | None = None, spec=None, cfg: SynthConfig | None = None) -> SceneSample:
    """Deterministic scene from ``seed``. ``spec`` (a VoxelGridSpec) clips the
    placement area and drops points outside the grid range."""
    cfg = cfg or SynthConfig()
    if n_objects is not None:
        cfg = replace(cfg, n_objects=n_objects)
    if cfg.n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    rng = np.random.default_rng(seed)
    x_max = cfg.x_range[1]
    y_lim = cfg.y_limit
    if spec is not None:
        x_max = min(x_max, spec.range_max[0] - 2.5)
        y_lim = min(y_lim, spec.range_max[1] - 2.5, -spec.range_min[1] - 2.5)
        cfg = replace(cfg, x_range=(max(cfg.x_range[0], spec.range_min[0] + 2.5), x_max), y_limit=y_lim)
    taken: list = []
    cars = _place(rng, cfg, cfg.n_objects, "car", taken)
    clutter = _place(rng, cfg, cfg.n_distractors, "clutter", taken)
    parts = [sample_ground(rng, cfg, x_max + 5, y_lim + 5)]
    ground = parts[0]
    for b in taken:
        ground = ground[~points_in_box(ground, replace(b, h=b.h + 1.0), margin=0.05)]
    parts = [ground]
    for b in cars:
        parts.append(sample_surface(b, rng, cfg))
    for b in clutter:
        parts.append(sample_clutter(b, rng, cfg))
    points = np.vstack(parts)
    if spec is not None:
        lo, hi = np.asarray(spec.range_min), np.asarray(spec.range_max)
        points = points[np.all((points[:, :3] >= lo) & (points[:, :3] < hi), axis=1)]
    calib = default_calibration(cfg)
    feats = render_camera_features(cars + clutter, calib, cfg, rng)
    return SceneSample(points, [calib], [feats], cars, clutter, tuple(cfg.image_size), 8.0, f"synth-{seed}")
