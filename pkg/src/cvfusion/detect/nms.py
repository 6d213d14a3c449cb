"""Greedy rotated non-maximum suppression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Box3D, bev_iou_tuples, boxes_to_array


@dataclass(frozen=True)
class Proposal:
    box: Box3D
    objectness: float
    anchor_index: int = -1


def nms_order(scores: np.ndarray) -> np.ndarray:
    """Descending score; ties keep the earlier index first."""
    scores = np.asarray(scores, float)
    return np.lexsort((np.arange(len(scores)), -scores))


def nms(boxes, scores, iou_threshold: float = 0.7, max_keep: int = 100) -> np.ndarray:
    """Indices of kept boxes in descending-score order.

    A box is dropped when its BEV IoU with an already kept box exceeds
    ``iou_threshold``.
    """
    b = boxes_to_array(boxes)
    scores = np.asarray(scores, float)
    if len(b) == 0:
        return np.zeros(0, dtype=np.int64)
    order = nms_order(scores)
    radius = 0.5 * np.hypot(b[:, 3], b[:, 4])
    rows = [tuple(r) for r in b[:, :7].tolist()]
    alive = np.ones(len(b), dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if not alive[i]:
            continue
        keep.append(i)
        if len(keep) >= max_keep:
            break
        rest = order[pos + 1 :]
        rest = rest[alive[rest]]
        near = rest[np.hypot(b[rest, 0] - b[i, 0], b[rest, 1] - b[i, 1]) < radius[rest] + radius[i]]
        for j in near:
            if bev_iou_tuples(rows[i], rows[j]) > iou_threshold:
                alive[j] = False
    return np.asarray(keep, dtype=np.int64)


def nms_proposals(proposals: list, iou_threshold: float = 0.7, max_keep: int = 100) -> list:
    keep = nms([p.box for p in proposals], [p.objectness for p in proposals], iou_threshold, max_keep)
    return [proposals[i] for i in keep]
