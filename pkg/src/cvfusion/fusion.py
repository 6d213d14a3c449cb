"""Gated camera-LiDAR fusion with single-channel spatial attention maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class GatedFusionParams:
    cam_weight: Tensor  # [1, C_c + C_l, 3, 3]
    cam_bias: Tensor  # [1]
    lidar_weight: Tensor
    lidar_bias: Tensor

    @classmethod
    def init(cls, cam_ch: int, lidar_ch: int, rng: np.random.Generator, scale: float = 0.05) -> "GatedFusionParams":
        c = cam_ch + lidar_ch
        return cls(
            T.parameter(rng.normal(0, scale, (1, c, 3, 3)), "gate.cam.w"),
            T.parameter(np.zeros(1), "gate.cam.b"),
            T.parameter(rng.normal(0, scale, (1, c, 3, 3)), "gate.lidar.w"),
            T.parameter(np.zeros(1), "gate.lidar.b"),
        )

    @classmethod
    def zeros(cls, cam_ch: int, lidar_ch: int) -> "GatedFusionParams":
        c = cam_ch + lidar_ch
        return cls(
            T.parameter(np.zeros((1, c, 3, 3))),
            T.parameter(np.zeros(1)),
            T.parameter(np.zeros((1, c, 3, 3))),
            T.parameter(np.zeros(1)),
        )


@dataclass
class FusionOutput:
    joint: Tensor
    cam_attention: Tensor  # [1, H, W]
    lidar_attention: Tensor


def gated_fuse(cam: Tensor, lidar: Tensor, params: GatedFusionParams) -> FusionOutput:
    """F_joint = (F_C * sig(Conv_C(F_C ++ F_L))) ++ (F_L * sig(Conv_L(F_C ++ F_L)))."""
    if cam.ndim != 3 or lidar.ndim != 3 or cam.shape[1:] != lidar.shape[1:]:
        raise ShapeError(f"camera {cam.shape} and LiDAR {lidar.shape} maps are not spatially aligned")
    both = T.concat_channels(cam, lidar)
    att_c = T.sigmoid(T.conv2d(both, params.cam_weight, params.cam_bias, stride=1, padding=1))
    att_l = T.sigmoid(T.conv2d(both, params.lidar_weight, params.lidar_bias, stride=1, padding=1))
    joint = T.concat_channels(T.mul(cam, att_c), T.mul(lidar, att_l))
    return FusionOutput(joint, att_c, att_l)
