"""Detection losses: focal classification, smooth-L1 box regression with a
sine yaw residual, IoU-guided confidence, and the weighted stage totals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 1.0
    beta2: float = 2.0
    alpha: float = 0.25
    gamma: float = 2.0
    iou_lo: float = 0.25
    iou_hi: float = 0.75


def _zero() -> Tensor:
    return T.Tensor(0.0)


def focal_loss(prob: Tensor, targets=None, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean focal loss over boxes.

    Positive targets contribute -alpha (1-p)^gamma log p; negatives the
    mirrored -(1-alpha) p^gamma log(1-p). ``targets=None`` means every box is
    positive. Probabilities are clamped at 1e-12 inside the logs.
    """
    prob = T.as_tensor(prob)
    n = prob.data.size
    if n == 0:
        return _zero()
    t = np.ones(prob.shape) if targets is None else np.asarray(targets, float).reshape(prob.shape)
    one_minus = T.sub(1.0, prob)
    pos = T.mul(T.mul(T.power(one_minus, gamma), T.log(prob)), -alpha * t)
    neg = T.mul(T.mul(T.power(prob, gamma), T.log(one_minus)), -(1.0 - alpha) * (1.0 - t))
    return T.scale(T.sum(T.add(pos, neg)), 1.0 / n)


def focal_loss_logits(logits: Tensor, targets, weights: LossWeights = LossWeights()) -> Tensor:
    return focal_loss(T.sigmoid(logits), targets, weights.alpha, weights.gamma)


def reg_loss_loc(pred: Tensor, target) -> Tensor:
    """Smooth-L1 on the six non-angle residuals, summed per box, averaged over boxes."""
    pred = T.as_tensor(pred)
    n = pred.shape[0]
    if n == 0:
        return _zero()
    target = np.asarray(target, float)
    diff = T.sub(T.take(pred, (slice(None), slice(0, 6))), target[:, :6])
    return T.scale(T.sum(T.smooth_l1(diff)), 1.0 / n)


def reg_loss_angle(pred_yaw: Tensor, target_yaw) -> Tensor:
    """Smooth-L1 of sin(pred - target), averaged; a pi error costs nothing."""
    pred_yaw = T.as_tensor(pred_yaw)
    n = pred_yaw.data.size
    if n == 0:
        return _zero()
    diff = T.sin(T.sub(pred_yaw, np.asarray(target_yaw, float).reshape(pred_yaw.shape)))
    return T.scale(T.sum(T.smooth_l1(diff)), 1.0 / n)


def box_regression_losses(pred: Tensor, target):
    """(loc, angle) losses for [N,7] residual predictions against [N,7] targets."""
    pred = T.as_tensor(pred)
    if pred.shape[0] == 0:
        return _zero(), _zero()
    target = np.asarray(target, float)
    return reg_loss_loc(pred, target), reg_loss_angle(T.take(pred, (slice(None), 6)), target[:, 6])


def iou_soft_target(iou, lo: float = 0.25, hi: float = 0.75) -> np.ndarray:
    return np.clip((np.asarray(iou, float) - lo) / (hi - lo), 0.0, 1.0)


def iou_confidence_loss(logits: Tensor, iou, weights: LossWeights = LossWeights()) -> Tensor:
    """Binary cross-entropy between sigmoid(logits) and the IoU ramp target."""
    logits = T.as_tensor(logits)
    n = logits.data.size
    if n == 0:
        return _zero()
    t = iou_soft_target(iou, weights.iou_lo, weights.iou_hi).reshape(logits.shape)
    p = T.sigmoid(logits)
    ll = T.add(T.mul(T.log(p), t), T.mul(T.log(T.sub(1.0, p)), 1.0 - t))
    return T.scale(T.sum(ll), -1.0 / n)


def rpn_loss(l_cls, l_loc, l_angle, weights: LossWeights = LossWeights()):
    """beta1 * L_cls + beta2 * (L_angle + L_loc); works on floats or Tensors."""
    if isinstance(l_cls, Tensor) or isinstance(l_loc, Tensor) or isinstance(l_angle, Tensor):
        return T.add(T.scale(T.as_tensor(l_cls), weights.beta1), T.scale(T.add(l_angle, l_loc), weights.beta2))
    return weights.beta1 * l_cls + weights.beta2 * (l_angle + l_loc)


def refinement_loss(l_iou, l_loc, l_angle, weights: LossWeights = LossWeights()):
    """beta1 * L_iou + beta2 * (L_angle + L_loc)."""
    return rpn_loss(l_iou, l_loc, l_angle, weights)
