"""Binary PGM/PPM reading and writing, BEV map dumps, and a tiny conv stem
that turns a decoded image into stride-8 camera features."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ImageFormatError(ValueError):
    pass


def write_pnm(path, pixels: np.ndarray) -> None:
    """uint8 [H,W] -> P5 (PGM) or [H,W,3] -> P6 (PPM)."""
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        raise ImageFormatError(f"pixels must be uint8, got {px.dtype}")
    if px.ndim == 2:
        magic = b"P5"
    elif px.ndim == 3 and px.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"expected [H,W] or [H,W,3] pixels, got shape {px.shape}")
    h, w = px.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(px).tobytes())


def _header_tokens(raw: bytes, path, count: int):
    """First ``count`` whitespace-separated header tokens (comments skipped) and
    the offset of the single whitespace byte that ends the header."""
    tokens, i, n = [], 0, len(raw)
    while len(tokens) < count:
        while i < n and raw[i : i + 1].isspace():
            i += 1
        if i < n and raw[i : i + 1] == b"#":
            while i < n and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not raw[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ImageFormatError(f"{path}: header ends at byte {i}")
        tokens.append(raw[start:i])
    return tokens, i


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) -> uint8 [H,W]; PPM (P6) -> uint8 [H,W,3]. maxval must be 255."""
    raw = Path(path).read_bytes()
    tokens, end = _header_tokens(raw, path, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported magic {magic!r} at byte 0")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: non-integer header field") from None
    if maxval != 255 or w <= 0 or h <= 0:
        raise ImageFormatError(f"{path}: need positive size and maxval 255, got {w}x{h} max {maxval}")
    chans = 1 if magic == b"P5" else 3
    body = raw[end + 1 :]
    need = w * h * chans
    if len(body) != need:
        raise ImageFormatError(f"{path}: pixel data is {len(body)} bytes at offset {end + 1}, expected {need}")
    px = np.frombuffer(body, dtype=np.uint8)
    return px.reshape(h, w) if chans == 1 else px.reshape(h, w, 3)


def quantize_map(values) -> np.ndarray:
    """Min-max normalise a 2D map (or [C,H,W], reduced by L2 norm over C) to uint8.

    A constant map becomes uniform 128.
    """
    m = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if m.ndim == 3:
        m = np.sqrt((m * m).sum(axis=0))
    if m.ndim != 2:
        raise ValueError(f"expected a 2D map or [C,H,W] features, got shape {m.shape}")
    lo, hi = float(m.min()), float(m.max())
    if not hi > lo:
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def dump_bev_image(feature_map, path) -> np.ndarray:
    """Write the quantised map as an 8-bit PGM; returns the pixels written.

    Row 0 of the map is the first image row, so BEV rows (increasing y) run
    down the image.
    """
    px = quantize_map(feature_map)
    write_pnm(path, px)
    return px


# ---------------------------------------------------------------- image stem

@dataclass
class ImageStemParams:
    """Three 3x3 stride-2 convs: a stand-in for a pretrained image backbone."""

    weights: list
    biases: list

    @classmethod
    def init(cls, in_ch: int, out_ch: int, rng: np.random.Generator, hidden: int = 8) -> "ImageStemParams":
        widths = (hidden, hidden, out_ch)
        ws, bs, c = [], [], in_ch
        for i, out in enumerate(widths):
            ws.append(T.parameter(rng.normal(0, np.sqrt(2.0 / (9 * c)), (out, c, 3, 3)), f"stem.conv{i}.w"))
            bs.append(T.parameter(np.zeros(out), f"stem.conv{i}.b"))
            c = out
        return cls(ws, bs)


def image_to_tensor(pixels: np.ndarray) -> Tensor:
    """uint8 [H,W] or [H,W,3] -> float [C,H,W] in [0,1]."""
    px = np.asarray(pixels, dtype=np.float64) / 255.0
    return T.Tensor(px[None] if px.ndim == 2 else px.transpose(2, 0, 1))


def image_stem(image: Tensor, params: ImageStemParams) -> Tensor:
    """[C_in,H,W] -> [C_out, ceil(H/8), ceil(W/8)]."""
    x = image
    for w, b in zip(params.weights, params.biases):
        x = T.relu(T.conv2d(x, w, b, stride=2, padding=1))
    return x
