"""Voxelisation, per-voxel point encoding and the stride-8 BEV LiDAR backbone."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class VoxelGridSpec:
    range_min: tuple = (0.0, -40.0, -3.0)
    range_max: tuple = (70.4, 40.0, 1.0)
    voxel_size: tuple = (0.05, 0.05, 0.1)
    max_points_per_voxel: float = 5
    stride: int = 8

    def __post_init__(self):
        for name in ("range_min", "range_max", "voxel_size"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError("voxel sizes must be positive")
        extent = np.subtract(self.range_max, self.range_min)
        if np.any(extent <= 0):
            raise ValueError("range_max must exceed range_min on every axis")
        ratio = extent / np.asarray(self.voxel_size)
        if np.any(np.abs(ratio - np.round(ratio)) > 1e-9 * np.maximum(1.0, ratio)):
            raise ValueError(f"range is not a whole number of voxels: {ratio}")
        nx, ny, _ = self.dims
        if nx % self.stride or ny % self.stride:
            raise ValueError(f"grid x/y dims ({nx}, {ny}) must be divisible by {self.stride}")

    @classmethod
    def kitti(cls) -> "VoxelGridSpec":
        return cls()

    @property
    def dims(self) -> tuple:
        """(n_x, n_y, n_z)."""
        extent = np.subtract(self.range_max, self.range_min)
        return tuple(int(v) for v in np.round(extent / np.asarray(self.voxel_size)))

    @property
    def bev_shape(self) -> tuple:
        """(H, W) = (n_y, n_x) / stride."""
        nx, ny, _ = self.dims
        return ny // self.stride, nx // self.stride

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        rel = (np.asarray(points, float)[:, :3] - np.asarray(self.range_min)) / np.asarray(self.voxel_size)
        return np.floor(rel).astype(np.int64)


@dataclass(frozen=True)
class BevGrid:
    """Metric placement of a BEV raster: cell (row i, col j) is centred at
    (x_min + (j + 0.5) * cell, y_min + (i + 0.5) * cell)."""

    x_min: float
    y_min: float
    cell: float
    height: int
    width: int

    @classmethod
    def from_spec(cls, spec: VoxelGridSpec, stride: int | None = None) -> "BevGrid":
        stride = spec.stride if stride is None else stride
        nx, ny, _ = spec.dims
        if spec.voxel_size[0] != spec.voxel_size[1]:
            raise ValueError("BEV rasters need square voxels in x/y")
        return cls(spec.range_min[0], spec.range_min[1], spec.voxel_size[0] * stride, ny // stride, nx // stride)

    def to_feature_coords(self, xy: np.ndarray) -> np.ndarray:
        """Metric (x, y) -> continuous (col, row) with cell centres on integers."""
        xy = np.asarray(xy, float)
        return np.stack(
            [(xy[..., 0] - self.x_min) / self.cell - 0.5, (xy[..., 1] - self.y_min) / self.cell - 0.5], axis=-1
        )

    def cell_centers(self) -> np.ndarray:
        """[H, W, 2] metric centres."""
        xs = self.x_min + (np.arange(self.width) + 0.5) * self.cell
        ys = self.y_min + (np.arange(self.height) + 0.5) * self.cell
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)


@dataclass
class VoxelizedScene:
    """Occupied voxels with their (capped) point lists.

    ``coords[v]`` is (i_x, i_y, i_z); the points of voxel ``v`` are the rows of
    ``points`` where ``point_voxel == v`` (rows are grouped by voxel).
    """

    spec: VoxelGridSpec
    coords: np.ndarray
    points: np.ndarray
    point_voxel: np.ndarray
    dropped: int = 0
    out_of_range: int = 0

    @property
    def n_voxels(self) -> int:
        return len(self.coords)

    def __len__(self) -> int:
        return self.n_voxels

    @property
    def voxels(self) -> dict:
        starts = np.searchsorted(self.point_voxel, np.arange(self.n_voxels + 1))
        return {
            tuple(int(c) for c in self.coords[v]): self.points[starts[v] : starts[v + 1]]
            for v in range(self.n_voxels)
        }


def voxelize(points: np.ndarray, spec: VoxelGridSpec, seed: int = 0) -> VoxelizedScene:
    """Bucket points [N,4] into voxels, lower-inclusive / upper-exclusive per axis.

    Voxels holding more than ``spec.max_points_per_voxel`` points keep a
    seeded uniform subsample. Points inside a voxel are stored in
    lexicographic (x, y, z, intensity) order, so without overflow the result
    does not depend on input order.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    dims = np.asarray(spec.dims)
    idx = spec.voxel_index(points)
    inside = np.all((idx >= 0) & (idx < dims), axis=1) & np.all(
        points[:, :3] < np.asarray(spec.range_max), axis=1
    )
    out_of_range = int((~inside).sum())
    pts, idx = points[inside], idx[inside]
    lin = (idx[:, 2] * dims[1] + idx[:, 1]) * dims[0] + idx[:, 0]

    rng = np.random.default_rng(seed)
    keys = rng.random(len(pts))
    order = np.lexsort((keys, lin))
    lin_sorted = lin[order]
    starts = np.r_[0, np.flatnonzero(np.diff(lin_sorted)) + 1]
    counts = np.diff(np.r_[starts, len(lin_sorted)])
    rank = np.arange(len(lin_sorted)) - np.repeat(starts, counts)
    cap = spec.max_points_per_voxel
    keep = order[rank < cap] if np.isfinite(cap) else order
    dropped = len(pts) - len(keep)

    pts, lin = pts[keep], lin[keep]
    order = np.lexsort((pts[:, 3], pts[:, 2], pts[:, 1], pts[:, 0], lin))
    pts, lin = pts[order], lin[order]
    uniq, point_voxel = np.unique(lin, return_inverse=True)
    coords = np.column_stack([uniq % dims[0], (uniq // dims[0]) % dims[1], uniq // (dims[0] * dims[1])])
    return VoxelizedScene(spec, coords.astype(np.int64), pts, point_voxel.astype(np.int64), dropped, out_of_range)


@dataclass
class VoxelEncoderParams:
    """Shared per-point affine (4 -> width) followed by ReLU and a max over the voxel."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, width: int, rng: np.random.Generator) -> "VoxelEncoderParams":
        return cls(T.parameter(rng.normal(0, 0.5, (4, width)), "venc.w"), T.parameter(np.zeros(width), "venc.b"))


def point_features(scene: VoxelizedScene) -> np.ndarray:
    """[P, 4]: offsets from the voxel's point centroid, then intensity."""
    n = np.bincount(scene.point_voxel, minlength=scene.n_voxels)[:, None]
    sums = np.zeros((scene.n_voxels, 3))
    np.add.at(sums, scene.point_voxel, scene.points[:, :3])
    centroid = sums / n
    return np.column_stack([scene.points[:, :3] - centroid[scene.point_voxel], scene.points[:, 3]])


def encode_voxels(scene: VoxelizedScene, params: VoxelEncoderParams) -> Tensor:
    """One fixed-length feature per occupied voxel: [V, width]."""
    if scene.n_voxels == 0:
        return T.Tensor(np.zeros((0, params.weight.shape[1])))
    feats = T.Tensor._wrap(point_features(scene))
    per_point = T.relu(T.linear(feats, params.weight, params.bias))
    return T.segment_max(per_point, scene.point_voxel, scene.n_voxels)


@dataclass
class BackboneParams:
    """Three bias-free stride-2 3x3 convolutions; zero input stays zero."""

    weights: list

    @classmethod
    def init(cls, in_ch: int, widths: tuple, rng: np.random.Generator) -> "BackboneParams":
        ws, c = [], in_ch
        for i, out in enumerate(widths):
            ws.append(T.parameter(rng.normal(0, np.sqrt(2.0 / (9 * c)), (out, c, 3, 3)), f"bev.conv{i}"))
            c = out
        return cls(ws)


@dataclass
class BevFeatureMap:
    features: Tensor
    grid: BevGrid
    stages: list = field(default_factory=list)
    stage_grids: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.features.shape


def scatter_bev(scene: VoxelizedScene, voxel_features: Tensor) -> Tensor:
    """Sum voxel features over z into a dense [C, n_y, n_x] raster."""
    nx, ny, _ = scene.spec.dims
    width = voxel_features.shape[1]
    if scene.n_voxels == 0:
        return T.Tensor(np.zeros((width, ny, nx)))
    cell = scene.coords[:, 1] * nx + scene.coords[:, 0]
    flat = T.scatter_add(voxel_features, cell, nx * ny)  # [ny*nx, C]
    return T.reshape(T.transpose(flat), (width, ny, nx))


def bev_backbone(scene: VoxelizedScene, voxel_features: Tensor, params: BackboneParams) -> BevFeatureMap:
    if len(params.weights) != 3:
        raise ValueError("backbone needs exactly three stride-2 stages for the stride-8 contract")
    x = scatter_bev(scene, voxel_features)
    stages, grids = [], []
    for i, w in enumerate(params.weights):
        x = T.relu(T.conv2d(x, w, None, stride=2, padding=1))
        stages.append(x)
        grids.append(BevGrid.from_spec(scene.spec, stride=2 ** (i + 1)))
    return BevFeatureMap(x, grids[-1], stages, grids)
