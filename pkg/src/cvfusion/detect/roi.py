"""RoI feature pooling: rotated BEV alignment, camera grid pooling and
multi-scale LiDAR pooling, each followed by a PointNet-style set encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..geometry import CalibrationSet, boxes_to_array
from ..interp import interp_gather, neighbor_validity
from ..tensor import Tensor
from ..voxel import BevGrid


@dataclass
class SetEncoder:
    """Shared affine + ReLU per set element, then max over the set."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d_in: int, width: int, rng: np.random.Generator, name: str = "enc") -> "SetEncoder":
        w = rng.normal(0, np.sqrt(2.0 / d_in), (d_in, width))
        return cls(T.parameter(w, f"{name}.w"), T.parameter(np.zeros(width), f"{name}.b"))

    def __call__(self, elements: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """elements [P, N, D] -> [P, width]; masked-out elements cannot win the max."""
        h = T.relu(T.linear(elements, self.weight, self.bias))
        if mask is not None:
            # ReLU output is >= 0, so zeroing masked rows keeps them out of a
            # non-empty max and yields exactly zero for an all-masked set.
            h = T.mul(h, np.asarray(mask, float)[..., None])
        return T.max_over_set(h, axis=1)


def box_grid_offsets(size: np.ndarray, n: int, dims: int) -> np.ndarray:
    """Equally spaced cell-centre offsets inside a box of ``size`` (first ``dims`` axes)."""
    ticks = (np.arange(n) + 0.5) / n - 0.5
    axes = [ticks * s for s in size[:dims]]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _local_to_world(boxes: np.ndarray, local: np.ndarray) -> np.ndarray:
    """boxes [P,7], local [P,N,k] (along, across[, up]) -> world [P,N,k]."""
    c, s = np.cos(boxes[:, 6])[:, None], np.sin(boxes[:, 6])[:, None]
    x = boxes[:, 0:1] + local[..., 0] * c - local[..., 1] * s
    y = boxes[:, 1:2] + local[..., 0] * s + local[..., 1] * c
    cols = [x, y]
    if local.shape[-1] > 2:
        cols.append(boxes[:, 2:3] + local[..., 2])
    return np.stack(cols, axis=-1)


def roi_sample_points(boxes, out_size: int) -> np.ndarray:
    """World (x, y) sample points [P, G*G, 2]; row index runs across the box, column along it."""
    b = boxes_to_array(boxes)
    ticks = (np.arange(out_size) + 0.5) / out_size - 0.5
    across, along = np.meshgrid(ticks, ticks, indexing="ij")
    local = np.stack(
        [along.reshape(-1)[None] * b[:, 4:5], across.reshape(-1)[None] * b[:, 3:4]], axis=-1
    )
    return _local_to_world(b, local)


def rotated_roi_align(feature: Tensor, grid: BevGrid, boxes, out_size: int = 6, mode: str = "idw") -> Tensor:
    """Pool ``feature[C,H,W]`` on a G x G grid in each box's rotated frame -> [P, C, G, G]."""
    b = boxes_to_array(boxes)
    c = feature.shape[0]
    if len(b) == 0:
        return T.Tensor(np.zeros((0, c, out_size, out_size)))
    pts = roi_sample_points(b, out_size)
    pos = grid.to_feature_coords(pts).reshape(-1, 2)
    vals = interp_gather(feature, pos, mode)  # [P*G*G, C]
    vals = T.reshape(vals, (len(b), out_size, out_size, c))
    return T.transpose(vals, (0, 3, 1, 2))


def roi_grid_points(boxes, r: int) -> np.ndarray:
    """r^3 equally spaced points inside each box, world frame: [P, r^3, 3]."""
    b = boxes_to_array(boxes)
    ticks = (np.arange(r) + 0.5) / r - 0.5
    ga, gc, gu = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    unit = np.stack([ga.reshape(-1), gc.reshape(-1), gu.reshape(-1)], axis=-1)
    local = unit[None] * np.stack([b[:, 4], b[:, 3], b[:, 5]], axis=-1)[:, None, :]
    return _local_to_world(b, local)


def roi_grid_camera_pool(
    boxes,
    r: int,
    camera_features,
    calibs,
    encoder: SetEncoder,
    feature_stride: float = 8.0,
    mode: str = "idw",
    order: np.ndarray | None = None,
) -> Tensor:
    """Encode camera features at r^3 box grid points -> [P, n_cameras * width].

    Points behind a camera or off its feature map are masked out; a box no
    camera sees pools to zeros. ``order`` optionally permutes grid points.
    """
    if r < 1:
        raise ValueError("grid resolution r must be >= 1")
    if isinstance(camera_features, Tensor):
        camera_features = [camera_features]
    if isinstance(calibs, CalibrationSet):
        calibs = [calibs]
    b = boxes_to_array(boxes)
    width = encoder.weight.shape[1]
    if len(b) == 0:
        return T.Tensor(np.zeros((0, width * len(camera_features))))
    pts = roi_grid_points(b, r)
    if order is not None:
        pts = pts[:, order]
    p, n, _ = pts.shape
    pooled = []
    for feat, calib in zip(camera_features, calibs):
        c, fh, fw = feat.shape
        uv, depth = calib.project(pts.reshape(-1, 3))
        pos = uv / feature_stride
        visible = (depth > 0) & neighbor_validity(np.where((depth > 0)[:, None], pos, -1e9), fh, fw, mode)
        pos = np.where(visible[:, None], pos, -10.0)
        vals = T.reshape(interp_gather(feat, pos, mode), (p, n, c))
        pooled.append(encoder(vals, visible.reshape(p, n)))
    return T.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]


def roi_lidar_pool(stages, stage_grids, boxes, encoders, out_size: int = 6, mode: str = "idw") -> Tensor:
    """Per scale: rotated RoI align, then that scale's set encoder; concatenated -> [P, S * width]."""
    if not len(stages) == len(stage_grids) == len(encoders) or not stages:
        raise ValueError("need matching non-empty lists of stages, grids and encoders")
    b = boxes_to_array(boxes)
    outs = []
    for feat, grid, enc in zip(stages, stage_grids, encoders):
        aligned = rotated_roi_align(feat, grid, b, out_size, mode)  # [P,C,G,G]
        p, c = aligned.shape[:2]
        elems = T.transpose(T.reshape(aligned, (p, c, out_size * out_size)), (0, 2, 1))
        if p == 0:
            outs.append(T.Tensor(np.zeros((0, enc.weight.shape[1]))))
            continue
        outs.append(enc(elems))
    return T.concat(outs, axis=1) if len(outs) > 1 else outs[0]
