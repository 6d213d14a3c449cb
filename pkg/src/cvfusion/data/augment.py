"""Joint point/box/calibration augmentation: flip, yaw rotation, scaling."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..geometry import Box3D, Flip, Rotate, Scale, adjust_calibration, transform_boxes, transform_cloud
from .config import AugmentConfig


@dataclass(frozen=True)
class AugmentDraw:
    flip: bool
    angle: float
    scale: float

    def ops(self) -> list:
        out = []
        if self.flip:
            out.append(Flip())
        if self.angle != 0.0:
            out.append(Rotate(self.angle))
        if self.scale != 1.0:
            out.append(Scale(self.scale))
        return out


def draw_augmentation(seed: int, bounds: AugmentConfig = AugmentConfig()) -> AugmentDraw:
    rng = np.random.default_rng(seed)
    flip = bool(bounds.flip) and bool(rng.random() < 0.5)
    angle = float(rng.uniform(*bounds.rotation))
    scale = float(rng.uniform(*bounds.scale))
    return AugmentDraw(flip, angle, scale)


def apply_augmentation(sample, draw: AugmentDraw):
    points = sample.points
    boxes = sample.gt_array
    clutter = np.array([b.as_array() for b in sample.distractors]).reshape(-1, 7)
    calibs = list(sample.calibs)
    for op in draw.ops():
        points = transform_cloud(points, op)
        boxes = transform_boxes(boxes, op)
        clutter = transform_boxes(clutter, op)
        calibs = [adjust_calibration(c, op) for c in calibs]
    gts = [Box3D.from_array(b, g.label) for b, g in zip(boxes, sample.gt_boxes)]
    dis = [Box3D.from_array(b, g.label) for b, g in zip(clutter, sample.distractors)]
    return replace(sample, points=points, calibs=calibs, gt_boxes=gts, distractors=dis)


def augment(sample, seed: int, bounds: AugmentConfig = AugmentConfig()):
    """Random flip / rotation / scale applied to points, boxes and calibrations together."""
    return apply_augmentation(sample, draw_augmentation(seed, bounds))


DEFAULT_ROTATION = (-math.pi / 4, math.pi / 4)
DEFAULT_SCALE = (0.95, 1.05)
