"""Four-neighbour feature interpolation, differentiable in features and positions.

Two weightings are available:

* ``"idw"`` -- inverse Euclidean distance to each of the four lattice
  neighbours, normalised to sum to one. A position within ``SNAP`` of a
  lattice point takes that point's value outright.
* ``"bilinear"`` -- the usual product-of-tents weights.

Neighbour order throughout is (x0,y0), (x1,y0), (x0,y1), (x1,y1).
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

SNAP = 1e-12
_OFFSETS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)


def interp_weights(pos, neighbors=None, mode: str = "idw") -> np.ndarray:
    """Weights of the four lattice neighbours of one continuous position."""
    pos = np.asarray(pos, dtype=np.float64)
    if neighbors is None:
        neighbors = np.floor(pos).astype(np.int64) + _OFFSETS
    w, _ = _weights(pos[None], np.asarray(neighbors, dtype=np.float64)[None], mode)
    return w[0]


def _weights(pos: np.ndarray, corners: np.ndarray, mode: str):
    """pos [N,2], corners [N,4,2] -> (weights [N,4], d weights / d pos [N,4,2])."""
    diff = pos[:, None, :] - corners  # [N,4,2]
    if mode == "bilinear":
        tent = 1.0 - np.abs(diff)  # per-axis tents
        w = tent[..., 0] * tent[..., 1]
        dtent = -np.sign(diff)
        dw = np.stack([dtent[..., 0] * tent[..., 1], tent[..., 0] * dtent[..., 1]], axis=-1)
        return w, dw
    if mode != "idw":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    dist = np.sqrt((diff**2).sum(-1))
    snapped = dist < SNAP
    any_snap = snapped.any(axis=1)
    safe = np.where(snapped, 1.0, dist)
    inv = 1.0 / safe
    total = inv.sum(axis=1, keepdims=True)
    w = inv / total
    # d inv_k / d pos = -diff_k / d_k^3
    dinv = -diff / safe[..., None] ** 3
    dtotal = dinv.sum(axis=1, keepdims=True)
    dw = (dinv * total[..., None] - inv[..., None] * dtotal) / total[..., None] ** 2
    if any_snap.any():
        first = np.argmax(snapped, axis=1)
        onehot = np.zeros_like(w)
        onehot[np.arange(len(w)), first] = 1.0
        w = np.where(any_snap[:, None], onehot, w)
        dw = np.where(any_snap[:, None, None], 0.0, dw)
    return w, dw


def neighbor_validity(pos: np.ndarray, height: int, width: int, mode: str = "idw") -> np.ndarray:
    """True where the whole 4-neighbourhood lies on the map (or the position
    snaps onto an on-map lattice point)."""
    pos = np.asarray(pos, float)
    base = np.floor(pos)
    ok = (base[:, 0] >= 0) & (base[:, 0] + 1 <= width - 1) & (base[:, 1] >= 0) & (base[:, 1] + 1 <= height - 1)
    if mode == "idw":
        near = np.round(pos)
        snap = np.hypot(*(pos - near).T) < SNAP
        on_map = (near[:, 0] >= 0) & (near[:, 0] <= width - 1) & (near[:, 1] >= 0) & (near[:, 1] <= height - 1)
        ok |= snap & on_map
    return ok & np.all(np.isfinite(pos), axis=1)


def interp_gather(feature: Tensor, pos, mode: str = "idw") -> Tensor:
    """Sample ``feature[C,H,W]`` at continuous (col, row) positions ``pos[N,2]`` -> [N,C].

    Neighbours falling off the map read as zero. ``pos`` may be a Tensor, in
    which case gradients flow into it through the interpolation weights.
    """
    pos_t = pos if isinstance(pos, Tensor) else None
    p = np.asarray(pos.data if pos_t is not None else pos, dtype=np.float64).reshape(-1, 2)
    c, h, w = feature.shape
    finite = np.all(np.isfinite(p), axis=1)
    p_safe = np.where(finite[:, None], p, -10.0)
    base = np.floor(p_safe).astype(np.int64)
    corners = base[:, None, :] + _OFFSETS  # [N,4,2]
    wts, dwts = _weights(p_safe, corners.astype(np.float64), mode)
    inb = (corners[..., 0] >= 0) & (corners[..., 0] < w) & (corners[..., 1] >= 0) & (corners[..., 1] < h)
    inb &= finite[:, None]
    flat_idx = np.where(inb, corners[..., 1] * w + corners[..., 0], 0)
    fflat = feature.data.reshape(c, h * w)
    vals = np.where(inb[None], fflat[:, flat_idx], 0.0)  # [C,N,4]
    out = np.einsum("cnk,nk->nc", vals, wts)

    inputs = [feature] + ([pos_t] if pos_t is not None else [])

    def back(g):
        # g: [N,C]
        gf = np.zeros((c, h * w))
        contrib = g.T[:, :, None] * (wts * inb)[None]  # [C,N,4]
        np.add.at(gf.T, flat_idx.reshape(-1), contrib.reshape(c, -1).T)
        grads = [gf.reshape(c, h, w)]
        if pos_t is not None:
            dl_dw = np.einsum("nc,cnk->nk", g, vals)
            gp = np.einsum("nk,nkd->nd", dl_dw, dwts)
            grads.append(gp.reshape(pos_t.shape))
        return tuple(grads)

    return T._make(out, "interp_gather", inputs, back, mode=mode)
