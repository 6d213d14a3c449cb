"""RPN and refinement heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


@dataclass
class RpnHeadParams:
    hidden_w: Tensor  # [H, C, 3, 3]
    hidden_b: Tensor
    cls_w: Tensor  # [A, H, 1, 1]
    cls_b: Tensor
    reg_w: Tensor  # [7A, H, 1, 1]
    reg_b: Tensor

    @classmethod
    def init(cls, in_ch: int, hidden: int, n_anchors: int, rng: np.random.Generator, prior: float = 0.01):
        return cls(
            T.parameter(rng.normal(0, np.sqrt(2.0 / (9 * in_ch)), (hidden, in_ch, 3, 3)), "rpn.hidden.w"),
            T.parameter(np.zeros(hidden), "rpn.hidden.b"),
            T.parameter(rng.normal(0, 0.01, (n_anchors, hidden, 1, 1)), "rpn.cls.w"),
            # focal-loss style prior so early training is not swamped by negatives
            T.parameter(np.full(n_anchors, -np.log((1 - prior) / prior)), "rpn.cls.b"),
            T.parameter(rng.normal(0, 0.01, (7 * n_anchors, hidden, 1, 1)), "rpn.reg.w"),
            T.parameter(np.zeros(7 * n_anchors), "rpn.reg.b"),
        )

    @classmethod
    def zeros(cls, in_ch: int, hidden: int, n_anchors: int):
        z = lambda *s: T.parameter(np.zeros(s))  # noqa: E731
        return cls(
            z(hidden, in_ch, 3, 3), z(hidden), z(n_anchors, hidden, 1, 1), z(n_anchors),
            z(7 * n_anchors, hidden, 1, 1), z(7 * n_anchors),
        )


def rpn_head(joint: Tensor, params: RpnHeadParams):
    """-> (objectness logits [A,H,W], residuals [7A,H,W])."""
    h = T.relu(T.conv2d(joint, params.hidden_w, params.hidden_b, stride=1, padding=1))
    return T.conv2d(h, params.cls_w, params.cls_b), T.conv2d(h, params.reg_w, params.reg_b)


def flatten_rpn(cls_map: Tensor, reg_map: Tensor):
    """Reorder head outputs to anchor order (slot, row, col): logits [N], residuals [N,7]."""
    a, h, w = cls_map.shape
    logits = T.reshape(cls_map, (-1,))
    reg = T.transpose(T.reshape(reg_map, (a, 7, h, w)), (0, 2, 3, 1))
    return logits, T.reshape(reg, (-1, 7))


@dataclass
class RefineHeadParams:
    hidden_w: Tensor
    hidden_b: Tensor
    out_w: Tensor  # [hidden, 8]: confidence logit then 7 residuals
    out_b: Tensor

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator):
        return cls(
            T.parameter(rng.normal(0, np.sqrt(2.0 / d_in), (d_in, hidden)), "ref.hidden.w"),
            T.parameter(np.zeros(hidden), "ref.hidden.b"),
            T.parameter(rng.normal(0, 0.01, (hidden, 8)), "ref.out.w"),
            T.parameter(np.zeros(8), "ref.out.b"),
        )

    @classmethod
    def zeros(cls, d_in: int, hidden: int):
        return cls(
            T.parameter(np.zeros((d_in, hidden))), T.parameter(np.zeros(hidden)),
            T.parameter(np.zeros((hidden, 8))), T.parameter(np.zeros(8)),
        )


def refine_head(joint_roi: Tensor, lidar_vec: Tensor, cam_vec: Tensor, params: RefineHeadParams):
    """Concatenate [RoI-aligned joint features, LiDAR vector, camera vector] and
    regress -> (confidence logits [P], refinement residuals [P,7])."""
    p = joint_roi.shape[0]
    flat = T.reshape(joint_roi, (p, -1))
    x = T.concat([flat, lidar_vec, cam_vec], axis=1)
    h = T.relu(T.linear(x, params.hidden_w, params.hidden_b))
    out = T.linear(h, params.out_w, params.out_b)
    return T.reshape(T.take(out, (slice(None), 0)), (p,)), T.take(out, (slice(None), slice(1, 8)))
