"""Per-cell anchors and IoU-based target assignment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import boxes_to_array, encode_residuals, iou_matrix
from ..voxel import BevGrid


@dataclass(frozen=True)
class AnchorSpec:
    size: tuple = (1.6, 3.9, 1.56)  # w, l, h
    z: float = -1.0
    yaws: tuple = (0.0, math.pi / 2)


@dataclass
class AnchorSet:
    """Anchors flattened in (anchor slot, row, col) order, shape [A*H*W, 7]."""

    boxes: np.ndarray
    per_cell: int
    grid: BevGrid

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def shape(self) -> tuple:
        return self.per_cell, self.grid.height, self.grid.width


def make_anchors(grid: BevGrid, spec: AnchorSpec = AnchorSpec()) -> AnchorSet:
    centers = grid.cell_centers().reshape(-1, 2)
    w, l, h = spec.size
    blocks = []
    for yaw in spec.yaws:
        b = np.empty((len(centers), 7))
        b[:, :2] = centers
        b[:, 2] = spec.z
        b[:, 3:6] = (w, l, h)
        b[:, 6] = yaw
        blocks.append(b)
    return AnchorSet(np.vstack(blocks), len(spec.yaws), grid)


@dataclass
class Assignment:
    labels: np.ndarray  # 1 positive, 0 negative, -1 ignored
    matched: np.ndarray  # gt index per anchor, -1 if none
    residuals: np.ndarray  # [N,7] targets (zero where not positive)
    max_iou: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)


def assign_targets(anchors, gt_boxes, pos_iou: float = 0.6, neg_iou: float = 0.45) -> Assignment:
    """BEV-IoU anchor labelling; each gt also claims its best anchor."""
    if not 0.0 <= neg_iou <= pos_iou <= 1.0:
        raise ValueError("need 0 <= neg_iou <= pos_iou <= 1")
    a = anchors.boxes if isinstance(anchors, AnchorSet) else np.asarray(anchors, float)
    g = boxes_to_array(gt_boxes)
    n = len(a)
    labels = np.full(n, -1, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    residuals = np.zeros((n, 7))
    if len(g) == 0:
        labels[:] = 0
        return Assignment(labels, matched, residuals, np.zeros(n))
    ious = iou_matrix(a, g, "bev")
    best_gt = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), best_gt]
    labels[max_iou <= neg_iou] = 0
    labels[max_iou >= pos_iou] = 1
    matched[labels == 1] = best_gt[labels == 1]
    for j in range(len(g)):
        col = ious[:, j]
        if col.max() > 0:
            i = int(col.argmax())
            labels[i] = 1
            matched[i] = j
    pos = labels == 1
    residuals[pos] = encode_residuals(g[matched[pos]], a[pos])
    return Assignment(labels, matched, residuals, max_iou)
