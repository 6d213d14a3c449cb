"""Dense float64 tensors with explicit reverse-mode differentiation.

Every differentiable op returns a new :class:`Tensor` and, when any input
tracks gradients, attaches a :class:`Node` describing how it was produced.
:func:`record` walks those nodes into a topologically ordered list that
:func:`backward` consumes, so the graph can be inspected directly in tests.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ids = itertools.count()

# log() clamps its argument here; every clamp is counted in CLAMP_EVENTS.
LOG_EPS = 1e-12
CLAMP_EVENTS = {"log": 0}


class ShapeError(ValueError):
    pass


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    output_id: int
    backward_fn: Callable
    saved: dict = field(default_factory=dict)

    @property
    def input_ids(self) -> tuple:
        return tuple(t.id for t in self.inputs)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.id = next(_ids)
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # sugar over the functional ops below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _raise_nonscalar():
    raise ShapeError("item() needs a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(out: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn, **saved) -> Tensor:
    t = Tensor._wrap(out)
    if any(x.requires_grad for x in inputs):
        t.requires_grad = True
        t.node = Node(op, tuple(inputs), t.id, backward_fn, saved)
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), back)


elementwise_add = add


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), back)


elementwise_mul = mul


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,), factor=c)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def log(x: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log with the argument clamped from below at ``eps``."""
    x = as_tensor(x)
    low = x.data < eps
    if low.any():
        CLAMP_EVENTS["log"] += int(low.sum())
    safe = np.where(low, eps, x.data)
    return _make(np.log(safe), "log", (x,), lambda g: (np.where(low, 0.0, g / safe),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def sin(x: Tensor) -> Tensor:
    return _make(np.sin(x.data), "sin", (x,), lambda g: (g * np.cos(x.data),))


def power(x: Tensor, p: float) -> Tensor:
    def back(g):
        if p == 0:
            return (np.zeros_like(x.data),)
        return (g * p * np.power(x.data, p - 1),)

    return _make(np.power(x.data, p), "power", (x,), back, exponent=p)


def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: 0.5 x^2 / beta inside |x| < beta, else |x| - 0.5 beta."""
    d = x.data
    inside = np.abs(d) < beta
    out = np.where(inside, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)

    def back(g):
        return (g * np.where(inside, d / beta, np.sign(d)),)

    return _make(out, "smooth_l1", (x,), back, beta=beta)


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), "sum", (x,), back, axis=axis)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inv),))


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in backward."""
    out = x.data[index]
    if isinstance(out, np.ndarray) and np.shares_memory(out, x.data):
        out = out.copy()

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.asarray(out, dtype=np.float64), "take", (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: {t.shape} does not conform to {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, back)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """[C1,H,W] (+) [C2,H,W] -> [C1+C2,H,W]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: {a.shape} vs {b.shape}")
    return concat([a, b], axis=0)


def max_over_set(x: Tensor, axis: int = 0) -> Tensor:
    """Maximum along ``axis`` (the set axis); gradient goes to the first arg-max."""
    if x.shape[axis] == 0:
        raise ShapeError("max_over_set over an empty set")
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, "max_over_set", (x,), back, argmax=idx)


def segment_max(x: Tensor, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Row-wise max of ``x[N,D]`` within each segment -> ``[n_segments, D]``.

    ``segment_ids`` must be sorted ascending and every segment non-empty.
    """
    segment_ids = np.asarray(segment_ids)
    starts = np.flatnonzero(np.r_[True, segment_ids[1:] != segment_ids[:-1]])
    if len(starts) != n_segments:
        raise ShapeError("segment_max: every segment needs at least one row")
    out = np.maximum.reduceat(x.data, starts, axis=0)
    # first row attaining the max within each segment
    hit = x.data == out[segment_ids]
    rows = np.arange(len(segment_ids))
    first = np.full(out.shape, len(segment_ids), dtype=np.int64)
    cand = np.where(hit, rows[:, None], len(segment_ids))
    np.minimum.at(first, segment_ids, cand)

    def back(g):
        gx = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.shape[1]), first.shape)
        np.add.at(gx, (first, cols), g)
        return (gx,)

    return _make(out, "segment_max", (x,), back)


def scatter_add(x: Tensor, index: np.ndarray, n_rows: int) -> Tensor:
    """out[index[i]] += x[i]; ``x`` is [N,...], out is [n_rows,...]."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n_rows,) + x.shape[1:])
    np.add.at(out, index, x.data)
    return _make(out, "scatter_add", (x,), lambda g: (g[index],))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, "matmul", (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x[..., D] @ W[D, E] + b[E]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, : stride * ho : stride, : stride * wo : stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[C_in,H,W] with weight[C_out,C_in,k,k]."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, weight {weight.shape}")
    c_out, c_in, k, k2 = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}")
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d: kernel must be square with odd size")
    if stride not in (1, 2):
        raise ValueError("conv2d: stride must be 1 or 2")
    _, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: output would be empty")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _windows(xp, k, stride, ho, wo)  # [C_in, Ho, Wo, k, k]
    out = np.tensordot(weight.data, cols, axes=([1, 2, 3], [0, 3, 4]))
    inputs = [x, weight]
    if bias is not None:
        out = out + bias.data[:, None, None]
        inputs.append(bias)

    def back(g):
        gw = np.tensordot(g, cols, axes=([1, 2], [1, 2]))
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.tensordot(
                    weight.data[:, :, i, j], g, axes=([0], [0])
                )
        gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return _make(out, "conv2d", inputs, back, stride=stride, padding=padding)


# ---------------------------------------------------------------- graph + backward

def record(loss: Tensor) -> list[Node]:
    """Topologically ordered nodes reachable from ``loss`` (inputs before consumers)."""
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if t.node is None:
            continue
        if expanded:
            order.append(t.node)
            continue
        if t.id in seen:
            continue
        seen.add(t.id)
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and inp.id not in seen:
                stack.append((inp, False))
    return order


def backward(loss: Tensor) -> list[Node]:
    """Populate ``.grad`` on every requires_grad leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = record(loss)
    grads = {loss.id: np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            elif inp.id in grads:
                grads[inp.id] = grads[inp.id] + gi
            else:
                grads[inp.id] = gi
    if loss.node is None and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    return nodes


# ---------------------------------------------------------------- optimisation

def _param_list(params) -> list[Tensor]:
    return list(params.values()) if isinstance(params, Mapping) else list(params)


def sgd_step(params, learning_rate: float) -> None:
    """p <- p - lr * grad, then clear gradients."""
    plist = _param_list(params)
    for p in plist:
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {p.name or p.id} has no gradient")
    for p in plist:
        p.data = p.data - learning_rate * p.grad
        p.grad = None


class Adam:
    """Fixed-rate Adam; the toy trainer's default optimiser."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = _param_list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ValueError(f"Adam: parameter {p.name or p.id} has no gradient")
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad**2
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def zero_grad(params) -> None:
    for p in _param_list(params):
        p.zero_grad()


# ---------------------------------------------------------------- checkpoints

MAGIC = b"CVFPARAMS\x01"


def save_params(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write a parameter checkpoint (layout in docs/formats.md)."""
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name]
        # asarray, not ascontiguousarray: the latter promotes 0-d arrays to 1-d
        arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f8")
        key = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(key)))
        chunks.append(key)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
    pos = len(MAGIC)

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ValueError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = read("<I")
    out = {}
    for _ in range(count):
        (klen,) = read("<H")
        if pos + klen > len(buf):
            raise ValueError(f"{path}: truncated at byte {pos}")
        name = buf[pos : pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = read("<B")
        shape = read(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise ValueError(f"{path}: truncated at byte {pos}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return out


def numeric_grad(f: Callable[[], float], arrays: Iterable[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``f`` with respect to each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads
