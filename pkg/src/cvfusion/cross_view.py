"""Auto-calibrated projection of camera-view features into a dense BEV map.

Each cell of a BEV grid at twice the LiDAR feature resolution is represented
by a few 3D points (one per z-slab). Those points are projected into every
camera, shifted by a learnable per-tile offset in feature pixels, and the four
surrounding feature pixels are blended with :mod:`cvfusion.interp` weights.
Contributions from slabs and cameras that land on the feature map are averaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import CalibrationSet
from .interp import interp_gather, neighbor_validity
from .tensor import Tensor
from .voxel import BevGrid, VoxelGridSpec


@dataclass(frozen=True)
class CameraVoxelGrid:
    """BEV grid with half the LiDAR feature cell size and ``n_slabs`` z-samples per cell."""

    bev: BevGrid
    z_min: float
    z_max: float
    n_slabs: int = 4

    @classmethod
    def from_spec(cls, spec: VoxelGridSpec, n_slabs: int = 4) -> "CameraVoxelGrid":
        lidar = BevGrid.from_spec(spec)
        bev = BevGrid(lidar.x_min, lidar.y_min, lidar.cell / 2, lidar.height * 2, lidar.width * 2)
        return cls(bev, spec.range_min[2], spec.range_max[2], n_slabs)

    @property
    def shape(self) -> tuple:
        return self.bev.height, self.bev.width

    def slab_heights(self) -> np.ndarray:
        step = (self.z_max - self.z_min) / self.n_slabs
        return self.z_min + (np.arange(self.n_slabs) + 0.5) * step

    def centers(self) -> np.ndarray:
        """[H, W, S, 3] representative points."""
        xy = self.bev.cell_centers()
        h, w = self.shape
        z = self.slab_heights()
        out = np.empty((h, w, self.n_slabs, 3))
        out[..., :2] = xy[:, :, None, :]
        out[..., 2] = z
        return out


class OffsetField:
    """Learnable (dx, dy) feature-pixel offsets, one pair per BEV tile."""

    def __init__(self, tiles_y: int = 8, tiles_x: int = 8):
        self.values = T.parameter(np.zeros((tiles_y, tiles_x, 2)), "offsets")

    @property
    def tiles(self) -> tuple:
        return self.values.shape[:2]

    def tile_index(self, grid_shape: tuple) -> np.ndarray:
        """Flat tile id for every cell of a grid_shape (H, W) raster."""
        ty, tx = self.tiles
        h, w = grid_shape
        iy = np.minimum(np.arange(h) * ty // h, ty - 1)
        ix = np.minimum(np.arange(w) * tx // w, tx - 1)
        return (iy[:, None] * tx + ix[None, :]).astype(np.int64)


@dataclass
class ProjectionPlan:
    """Offset-free geometry for one camera: where each (cell, slab) lands."""

    cell: np.ndarray  # flat BEV cell id per sample
    pos: np.ndarray  # feature-map (col, row) before offsets
    tile: np.ndarray


def plan_projection(grid: CameraVoxelGrid, calib: CalibrationSet, feature_stride: float, tile_ids: np.ndarray):
    centers = grid.centers()
    h, w, s, _ = centers.shape
    uv, depth = calib.project(centers.reshape(-1, 3))
    front = depth > 0
    cell = np.repeat(np.arange(h * w), s)
    pos = uv / feature_stride
    return ProjectionPlan(cell[front], pos[front], np.repeat(tile_ids.reshape(-1), s)[front])


def auto_calibrated_project(
    camera_features,
    calibs,
    grid: CameraVoxelGrid,
    offsets: OffsetField | None,
    feature_stride: float = 8.0,
    mode: str = "idw",
    plans=None,
) -> Tensor:
    """Project per-camera features [C,H_f,W_f] to a [C, 2H, 2W] BEV map.

    ``offsets=None`` disables calibration offsets. ``plans`` may carry
    precomputed :class:`ProjectionPlan` objects (geometry only depends on
    calibration and grid).
    """
    if isinstance(camera_features, Tensor):
        camera_features = [camera_features]
    if isinstance(calibs, CalibrationSet):
        calibs = [calibs]
    if len(camera_features) != len(calibs):
        raise ValueError("need one calibration per camera feature map")
    gh, gw = grid.shape
    n_cells = gh * gw
    channels = camera_features[0].shape[0]
    if plans is None:
        tile_ids = offsets.tile_index(grid.shape) if offsets is not None else np.zeros((gh, gw), np.int64)
        plans = [plan_projection(grid, c, feature_stride, tile_ids) for c in calibs]

    sums, cells = [], []
    counts = np.zeros(n_cells)
    for feat, plan in zip(camera_features, plans):
        _, fh, fw = feat.shape
        if offsets is not None:
            shift = offsets.values.data.reshape(-1, 2)[plan.tile]
            valid = neighbor_validity(plan.pos + shift, fh, fw, mode)
            flat = T.reshape(offsets.values, (-1, 2))
            pos = T.add(T.Tensor._wrap(plan.pos[valid]), T.take(flat, plan.tile[valid]))
        else:
            valid = neighbor_validity(plan.pos, fh, fw, mode)
            pos = plan.pos[valid]
        if not valid.any():
            continue
        sums.append(interp_gather(feat, pos, mode))
        cells.append(plan.cell[valid])
        counts += np.bincount(plan.cell[valid], minlength=n_cells)
    if not sums:
        return T.Tensor(np.zeros((channels, gh, gw)))
    stacked = T.concat(sums, axis=0) if len(sums) > 1 else sums[0]
    acc = T.scatter_add(stacked, np.concatenate(cells), n_cells)  # [cells, C]
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)[:, None]
    avg = T.mul(acc, inv)
    return T.reshape(T.transpose(avg), (channels, gh, gw))


@dataclass
class CompressParams:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, in_ch: int, out_ch: int, rng: np.random.Generator) -> "CompressParams":
        w = rng.normal(0, np.sqrt(2.0 / (9 * in_ch)), (out_ch, in_ch, 3, 3))
        return cls(T.parameter(w, "cam.compress.w"), T.parameter(np.zeros(out_ch), "cam.compress.b"))


def bev_camera_compress(projected: Tensor, params: CompressParams) -> Tensor:
    """Stride-2 conv + ReLU bringing the 2x camera BEV map onto the LiDAR BEV grid."""
    _, h, w = projected.shape
    if h % 2 or w % 2:
        raise ValueError(f"camera BEV map must have even dims, got {(h, w)}")
    return T.relu(T.conv2d(projected, params.weight, params.bias, stride=2, padding=1))
