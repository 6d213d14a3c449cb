"""41-point interpolated AP, distance-binned AP, and the text report format."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, iou_3d

RECALL_LEVELS = np.linspace(0.0, 1.0, 41)
DISTANCE_BINS = ((0.0, 20.0), (20.0, 40.0), (40.0, 70.0))


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    label: str = "Car"


@dataclass
class EvalReport:
    ap: dict  # key -> AP
    precision: dict = field(default_factory=dict)  # key -> list of precisions along the ranked list
    recall: dict = field(default_factory=dict)
    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    iou_threshold: float = 0.7

    def to_text(self) -> str:
        """``key: value`` lines, one block per AP key, in insertion order."""
        lines = [f"iou_threshold: {self.iou_threshold:.4f}"]
        for key in self.ap:
            lines.append(f"[{key}]")
            lines.append(f"ap: {self.ap[key]:.6f}")
            lines.append(f"tp: {self.tp.get(key, 0)}")
            lines.append(f"fp: {self.fp.get(key, 0)}")
            lines.append(f"fn: {self.fn.get(key, 0)}")
        return "\n".join(lines) + "\n"


def rank_order(scores) -> np.ndarray:
    """Descending score; ties keep insertion order."""
    scores = np.asarray(scores, float)
    return np.lexsort((np.arange(len(scores)), -scores))


def match_frame(dets: list, gts: list, iou_threshold: float, iou_fn=iou_3d, ignore=None):
    """Greedy matching in descending score order.

    Each detection takes the unmatched gt with highest IoU, provided the IoU
    reaches the threshold. Returns (tp flags per det, matched gt per det or
    -1, kept mask per det). Detections whose match is an ignored gt are
    dropped from the ranking (kept=False).
    """
    n, m = len(dets), len(gts)
    tp = np.zeros(n, dtype=bool)
    matched = np.full(n, -1, dtype=np.int64)
    kept = np.ones(n, dtype=bool)
    ignore = np.zeros(m, dtype=bool) if ignore is None else np.asarray(ignore, bool)
    taken = np.zeros(m, dtype=bool)
    for i in rank_order([d.score for d in dets]):
        best, best_j = -1.0, -1
        for j in range(m):
            if taken[j]:
                continue
            v = iou_fn(dets[i].box, gts[j])
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_threshold:
            taken[best_j] = True
            matched[i] = best_j
            if ignore[best_j]:
                kept[i] = False
            else:
                tp[i] = True
    return tp, matched, kept


def ap_from_flags(scores, tp_flags, n_gt: int):
    """41-point AP from a ranked TP/FP list -> (ap, precision, recall)."""
    scores = np.asarray(scores, float)
    tp_flags = np.asarray(tp_flags, bool)
    if n_gt == 0:
        if len(scores) == 0:
            warnings.warn("AP with no detections and no ground truth is defined as 1", stacklevel=2)
            return 1.0, np.zeros(0), np.zeros(0)
        return 0.0, np.zeros(len(scores)), np.zeros(len(scores))
    order = rank_order(scores)
    hits = tp_flags[order]
    ctp = np.cumsum(hits)
    precision = ctp / np.arange(1, len(hits) + 1)
    recall = ctp / n_gt
    if len(hits) == 0:
        return 0.0, precision, recall
    # running max from the right gives max precision over recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall >= k/40  <=>  40 * tp >= k * n_gt, compared in integers so that
    # e.g. recall 7/10 is not missed against a rounded 28/40
    n_levels = len(RECALL_LEVELS) - 1
    idx = np.searchsorted(ctp * n_levels, np.arange(n_levels + 1) * n_gt, side="left")
    interp = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(interp.sum() / len(RECALL_LEVELS)), precision, recall


def average_precision_41pt(dets: list, gts: list, iou_threshold: float = 0.7, iou_fn=iou_3d) -> float:
    """Single-frame AP with greedy 3D-IoU matching."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    tp, _, _ = match_frame(dets, gts, iou_threshold, iou_fn)
    return ap_from_flags([d.score for d in dets], tp, len(gts))[0]


def bev_range(box) -> float:
    b = box.as_array() if isinstance(box, Box3D) else np.asarray(box, float)
    return math.hypot(b[0], b[1])


def bin_index(r: float, bins=DISTANCE_BINS) -> int:
    for k, (lo, hi) in enumerate(bins):
        if lo <= r < hi:
            return k
    return -1


def bin_name(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}m"


def evaluate_frames(frames, iou_threshold: float = 0.7, bins=None, iou_fn=iou_3d) -> EvalReport:
    """AP over a list of (detections, gt boxes[, ignore mask]) frames.

    With ``bins``, gts are grouped by BEV range of their centre; a detection
    goes to the bin of its matched gt, or to the bin of its own range when
    unmatched. The overall AP is always reported under ``"all"``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    keys = ["all"] + ([bin_name(lo, hi) for lo, hi in bins] if bins else [])
    scores = {k: [] for k in keys}
    flags = {k: [] for k in keys}
    n_gt = {k: 0 for k in keys}
    for frame in frames:
        dets, gts = frame[0], frame[1]
        ignore = frame[2] if len(frame) > 2 else None
        tp, matched, kept = match_frame(dets, gts, iou_threshold, iou_fn, ignore)
        ign = np.zeros(len(gts), bool) if ignore is None else np.asarray(ignore, bool)
        n_gt["all"] += int((~ign).sum())
        gt_bin = [bin_index(bev_range(g), bins) for g in gts] if bins else []
        if bins:
            for j, k in enumerate(gt_bin):
                if k >= 0 and not ign[j]:
                    n_gt[keys[k + 1]] += 1
        for i, d in enumerate(dets):
            if not kept[i]:
                continue
            scores["all"].append(d.score)
            flags["all"].append(tp[i])
            if bins:
                k = gt_bin[matched[i]] if matched[i] >= 0 else bin_index(bev_range(d.box), bins)
                if k >= 0:
                    scores[keys[k + 1]].append(d.score)
                    flags[keys[k + 1]].append(tp[i])
    report = EvalReport(ap={}, iou_threshold=iou_threshold)
    for k in keys:
        ap, prec, rec = ap_from_flags(scores[k], flags[k], n_gt[k])
        report.ap[k] = ap
        report.precision[k] = list(map(float, prec))
        report.recall[k] = list(map(float, rec))
        n_tp = int(np.sum(flags[k]))
        report.tp[k] = n_tp
        report.fp[k] = len(flags[k]) - n_tp
        report.fn[k] = n_gt[k] - n_tp
    return report


def distance_binned_eval(dets: list, gts: list, iou_threshold: float = 0.7, bins=DISTANCE_BINS) -> dict:
    """Per-bin AP for one frame: {"0-20m": ap, ...}."""
    rep = evaluate_frames([(dets, gts)], iou_threshold, bins)
    return {k: v for k, v in rep.ap.items() if k != "all"}


def kitti_difficulty(obj) -> int:
    """0 easy, 1 moderate, 2 hard, -1 none, from a KittiObject's bbox height,
    occlusion and truncation."""
    height = obj.bbox[3] - obj.bbox[1]
    for level, (min_h, max_occ, max_trunc) in enumerate(((40, 0, 0.15), (25, 1, 0.3), (25, 2, 0.5))):
        if height >= min_h and obj.occluded <= max_occ and obj.truncated <= max_trunc:
            return level
    return -1
