"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous numpy float buffer. Differentiable
operations record a backward closure and their parent tensors; calling
:func:`backward` on a scalar loss traces the tape (forward execution order
is topological by construction) and sweeps it once in reverse, accumulating
gradients additively across fan-out.

Conventions:
  - convolutions use cross-correlation semantics (no kernel flip)
  - no implicit broadcasting: elementwise ops require equal shapes, bias
    addition is an explicit channel broadcast inside the conv ops
  - 64-bit floats for gradient checking, 32-bit allowed for training
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / data preparation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of the differentiable ops reaching a root tensor."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: "Tensor") -> "Tape":
        # Iterative post-order DFS; result is topologically sorted
        # (every op's inputs precede it).
        order, visited, stack = [], set(), [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor):
    """Populate grads of every requires_grad tensor reachable from ``loss``."""
    if loss.data.ndim != 0:
        raise ValueError("backward requires a scalar tensor")
    tape = Tape.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.data.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf
            node._accumulate(g)
            continue
        if node._backward is not None:
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent._accumulate(pg)
                else:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "hadamard")
    return _make(a.data * b.data, (a, b), lambda g: ((a, g * b.data), (b, g * a.data)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _make(x.data * c, (x,), lambda g: ((x, g * c),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(g):
        return ((x, g * out * (1.0 - out)),)

    return _make(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: ((x, g * (1.0 - out * out)),))


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        return ((x, np.full_like(x.data, g)),)

    return _make(np.asarray(x.data.sum(dtype=x.data.dtype)), (x,), bwd)


def average(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of same-shape tensors."""
    if not tensors:
        raise ValueError("average: empty input")
    for t in tensors[1:]:
        _check_same_shape(tensors[0], t, "average")
    n = len(tensors)
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    inv = tensors[0].data.dtype.type(1.0 / n)

    def bwd(g):
        pg = g * inv
        return tuple((t, pg) for t in tensors)

    return _make(acc * inv, tuple(tensors), bwd)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ValueError("stack: empty input")
    for t in tensors[1:]:
        _check_same_shape(tensors[0], t, "stack")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        slices = np.moveaxis(g, axis, 0)
        return tuple((t, np.ascontiguousarray(slices[i])) for i, t in enumerate(tensors))

    return _make(out, tuple(tensors), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input")
    base = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != base.data.ndim or t.dtype != base.dtype:
            raise ValueError("concat: rank/dtype mismatch")
        for ax in range(base.data.ndim):
            if ax != axis and t.shape[ax] != base.shape[ax]:
                raise ValueError(f"concat: off-axis extent mismatch {t.shape} vs {base.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        return tuple((t, np.ascontiguousarray(p)) for t, p in zip(tensors, parts))

    return _make(out, tuple(tensors), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(np.ascontiguousarray(out), (x,), lambda g: ((x, g.reshape(x.shape)),))


def take_rows(x: Tensor, idx) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.ascontiguousarray(x.data[idx])

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return ((x, dx),)

    return _make(out, (x,), bwd)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding of the trailing two (spatial) axes."""
    pad = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, pad)
    sl = (Ellipsis, slice(top, out.shape[-2] - bottom), slice(left, out.shape[-1] - right))

    def bwd(g):
        return ((x, np.ascontiguousarray(g[sl])),)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling / normalization


def _as_batched(x: np.ndarray, rank: int):
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def conv2d(input: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation; input [C,H,W] or [N,C,H,W], kernel [C_out,C_in,kH,kW]."""
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >=1 and padding >=0")
    x, squeeze = _as_batched(input.data, 3)
    w = kernel.data
    if w.ndim != 4:
        raise ValueError(f"conv2d: kernel must be 4-D, got {w.shape}")
    n, c_in, h, wd = x.shape
    c_out, kc, kh, kw = w.shape
    if kc != c_in:
        raise ValueError(f"conv2d: channel mismatch input {c_in} vs kernel {kc}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError("conv2d: kernel larger than padded input")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ValueError("conv2d: output extent is not exact for given stride/padding")
    oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias must have shape ({c_out},)")

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c_in, oh, ow, kh, kw) -> (n, c_in*kh*kw, oh*ow)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c_in * kh * kw, oh * ow)
    w2 = w.reshape(c_out, c_in * kh * kw)
    out = np.matmul(w2, cols).reshape(n, c_out, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (input, kernel) if bias is None else (input, kernel, bias)

    def bwd(g):
        g = g.reshape(n, c_out, oh, ow)
        g2 = g.reshape(n, c_out, oh * ow)
        results = []
        if input.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(n, c_in, kh, kw, oh, ow)
            dxp = np.zeros((n, c_in, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride] += dcols[:, :, i, j]
            dx = dxp[:, :, padding:hp - padding, padding:wp - padding] if padding else dxp
            if squeeze:
                dx = dx[0]
            results.append((input, np.ascontiguousarray(dx)))
        if kernel.requires_grad:
            dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
            results.append((kernel, dw))
        if bias is not None and bias.requires_grad:
            results.append((bias, g.sum(axis=(0, 2, 3))))
        return results

    return _make(out[0] if squeeze else out, parents, bwd)


def conv3d(input: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           spatial_padding: int = 0) -> Tensor:
    """Cross-correlation over depth x height x width, stride 1, no temporal padding.

    Input [C,D,H,W] or [N,C,D,H,W], kernel [C_out,C_in,kD,kH,kW].
    """
    if spatial_padding < 0:
        raise ValueError("conv3d: padding must be >= 0")
    x, squeeze = _as_batched(input.data, 4)
    w = kernel.data
    if w.ndim != 5:
        raise ValueError(f"conv3d: kernel must be 5-D, got {w.shape}")
    n, c_in, d, h, wd = x.shape
    c_out, kc, kd, kh, kw = w.shape
    if kc != c_in:
        raise ValueError(f"conv3d: channel mismatch input {c_in} vs kernel {kc}")
    if d < kd:
        raise ValueError("conv3d: kernel depth exceeds input depth")
    p = spatial_padding
    hp, wp = h + 2 * p, wd + 2 * p
    if hp < kh or wp < kw:
        raise ValueError("conv3d: kernel larger than padded input")
    od, oh, ow = d - kd + 1, hp - kh + 1, wp - kw + 1
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv3d: bias must have shape ({c_out},)")

    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    # (n, c_in, od, oh, ow, kd, kh, kw) -> (n, c_in*kd*kh*kw, od*oh*ow)
    cols = np.ascontiguousarray(win.transpose(0, 1, 5, 6, 7, 2, 3, 4)).reshape(
        n, c_in * kd * kh * kw, od * oh * ow)
    w2 = w.reshape(c_out, -1)
    out = np.matmul(w2, cols).reshape(n, c_out, od, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None, None]

    parents = (input, kernel) if bias is None else (input, kernel, bias)

    def bwd(g):
        g = g.reshape(n, c_out, od, oh, ow)
        g2 = g.reshape(n, c_out, od * oh * ow)
        results = []
        if input.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(n, c_in, kd, kh, kw, od, oh, ow)
            dxp = np.zeros((n, c_in, d, hp, wp), dtype=x.dtype)
            for t in range(kd):
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, t:t + od, i:i + oh, j:j + ow] += dcols[:, :, t, i, j]
            dx = dxp[:, :, :, p:hp - p, p:wp - p] if p else dxp
            if squeeze:
                dx = dx[0]
            results.append((input, np.ascontiguousarray(dx)))
        if kernel.requires_grad:
            dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
            results.append((kernel, dw))
        if bias is not None and bias.requires_grad:
            results.append((bias, g.sum(axis=(0, 2, 3, 4))))
        return results

    return _make(out[0] if squeeze else out, parents, bwd)


def max_pool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Floor-semantics max pooling; ties route gradient to the first element
    in row-major window order."""
    if window < 1 or stride < 1:
        raise ValueError("max_pool2d: window and stride must be >= 1")
    x, squeeze = _as_batched(input.data, 3)
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError("max_pool2d: window larger than input")
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, oh, ow, window * window)
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        g = g.reshape(n, c, oh, ow)
        dx = np.zeros_like(x)
        ni, ci, hi, wi = np.indices((n, c, oh, ow))
        rows = hi * stride + arg // window
        cols = wi * stride + arg % window
        np.add.at(dx, (ni, ci, rows, cols), g)
        return ((input, dx[0] if squeeze else dx),)

    return _make(np.ascontiguousarray(out[0] if squeeze else out), (input,), bwd)


def lrn(input: Tensor, n: int = 5, k: float = 2.0, alpha: float = 1e-4,
        beta: float = 0.75) -> Tensor:
    """Local response normalization across channels, window clipped at edges.

    out[c] = in[c] / (k + (alpha/n) * sum_{c' in window(c)} in[c']^2)^beta
    """
    if n < 1:
        raise ValueError("lrn: n must be >= 1")
    if k <= 0:
        raise ValueError("lrn: k must be positive")
    x, squeeze = _as_batched(input.data, 3)
    c = x.shape[1]
    lo, hi = (n - 1) // 2, n // 2  # window [c-lo, c+hi]
    sq = x * x
    s = np.zeros_like(x)
    for off in range(-lo, hi + 1):
        src_lo, src_hi = max(0, off), min(c, c + off)
        dst_lo, dst_hi = max(0, -off), min(c, c - off)
        s[:, dst_lo:dst_hi] += sq[:, src_lo:src_hi]
    a = alpha / n
    denom = k + a * s
    dpow = denom ** (-beta)
    out = x * dpow

    def bwd(g):
        g = g.reshape(x.shape)
        t = g * x * denom ** (-beta - 1.0)
        # dx[e] = g[e]*D[e]^-b - 2*a*b*x[e] * sum_{c: e in window(c)} t[c]
        acc = np.zeros_like(x)
        for off in range(-hi, lo + 1):
            src_lo, src_hi = max(0, off), min(c, c + off)
            dst_lo, dst_hi = max(0, -off), min(c, c - off)
            acc[:, dst_lo:dst_hi] += t[:, src_lo:src_hi]
        dx = g * dpow - 2.0 * a * beta * x * acc
        return ((input, dx[0] if squeeze else dx),)

    return _make(np.ascontiguousarray(out[0] if squeeze else out), (input,), bwd)


def global_avg_pool(input: Tensor) -> Tensor:
    """Spatial mean per channel; [C,H,W] -> [C] or [N,C,H,W] -> [N,C]."""
    x, squeeze = _as_batched(input.data, 3)
    n, c, h, w = x.shape
    out = x.mean(axis=(2, 3))
    inv = x.dtype.type(1.0 / (h * w))

    def bwd(g):
        g = g.reshape(n, c)
        dx = np.broadcast_to((g * inv)[:, :, None, None], x.shape).copy()
        return ((input, dx[0] if squeeze else dx),)

    return _make(np.ascontiguousarray(out[0] if squeeze else out), (input,), bwd)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (plain numpy helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """loss = -log softmax(logits)[label], max-subtracted for stability."""
    if logits.data.ndim != 1:
        raise ValueError("softmax_cross_entropy: logits must be 1-D")
    k = logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"softmax_cross_entropy: label {label} out of range [0,{k})")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    loss = lse - z[label]
    probs = np.exp(z - lse)

    def bwd(g):
        dz = probs.copy()
        dz[label] -= 1.0
        return ((logits, g * dz),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bwd)
