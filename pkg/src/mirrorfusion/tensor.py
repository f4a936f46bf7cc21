"""Dense channels-first tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, float64 available as a
verification mode).  Every differentiable op runs eagerly and, while gradients
are enabled, records itself on the active tape; backward() replays the recorded
subgraph in reverse.  Broadcasting is restricted to same-rank shapes with
singleton dimensions (plus rank-0 scalars), which is all the network needs.
"""

from __future__ import annotations

import math
import os
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_ACTIVE_TAPE: Optional["Tape"] = None
_NAN_CHECK = os.environ.get("MF_DEBUG_NAN", "0") not in ("", "0")


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Switch the engine element type; float64 is the gradient-verification mode."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt


class precision:
    """Context manager that temporarily switches the default dtype."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._saved = None

    def __enter__(self):
        global _DEFAULT_DTYPE
        self._saved = _DEFAULT_DTYPE
        set_default_dtype(self._dtype)
        return self

    def __exit__(self, *exc):
        global _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self._saved
        return False


def set_nan_check(enabled: bool) -> None:
    """Toggle the debug NaN check (also settable via MF_DEBUG_NAN=1)."""
    global _NAN_CHECK
    _NAN_CHECK = bool(enabled)


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tape:
    """Ordered record of executed differentiable ops.

    Ops run eagerly, so appending at execution time keeps the record in
    topological order by construction.  clear() severs the recorded graph so
    saved activations become collectable.
    """

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        self._saved = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._saved
        return False

    def clear(self) -> None:
        for t in self.records:
            t._parents = ()
            t._backward = None
        self.records.clear()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # asarray keeps rank-0 inputs rank-0 (ascontiguousarray would promote them)
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- gradient machinery ------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; leaf grads accumulate across calls."""
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that was not recorded on the tape")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        # Interior grads are per-pass scratch; only leaves accumulate across calls.
        for node in topo:
            if node._backward is not None:
                node.grad = None
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(out_data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    if _NAN_CHECK and np.isnan(out_data).any():
        raise FloatingPointError(f"NaN produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        if _ACTIVE_TAPE is not None:
            _ACTIVE_TAPE.records.append(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


# -- broadcasting -----------------------------------------------------------

def _check_broadcast(sa: tuple, sb: tuple) -> None:
    if len(sa) == 0 or len(sb) == 0:
        return  # rank-0 scalars broadcast against anything
    if len(sa) != len(sb):
        raise ShapeError(f"broadcast rank mismatch: {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes not broadcastable: {sa} vs {sb}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == tuple(shape):
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    out = g.sum(axis=axes, keepdims=True) if axes else g
    return out.reshape(shape)


# -- elementwise ops ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)

    def backward(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward, "sigmoid")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make(out_data, (x,), backward, "relu")


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * out_data)

    return _make(out_data, (x,), backward, "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.log(x.data)

    def backward(g):
        _accumulate(x, g / x.data)

    return _make(out_data, (x,), backward, "log")


def clamp(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        _accumulate(x, g * ((x.data >= lo) & (x.data <= hi)))

    return _make(out_data, (x,), backward, "clamp")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward, "matmul")


def softmax(x, axis: int) -> Tensor:
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - inner))

    return _make(out_data, (x,), backward, "softmax")


# -- structural ops -----------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out_data, (x,), backward, "reshape")


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def backward(g):
        offset = 0
        for t, n in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accumulate(t, g[tuple(idx)])
            offset += n

    return _make(out_data, tuple(ts), backward, "concat")


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not 0 <= start <= stop <= x.shape[axis]:
        raise IndexError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_data = np.ascontiguousarray(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        _accumulate(x, gx)

    return _make(out_data, (x,), backward, "slice")


def gather(x, axis: int, index: np.ndarray) -> Tensor:
    """Take positions along an axis; backward scatter-adds (duplicates accumulate)."""
    x = _as_tensor(x)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= x.shape[axis]):
        raise IndexError(f"gather index out of range for axis {axis} of {x.shape}")
    out_data = np.take(x.data, index, axis=axis)

    def backward(g):
        if x.ndim == 2 and axis == 1:
            # hot path: offset-bincount scatter, one pass over all channels
            rows, cols = x.shape
            flat = (np.arange(rows)[:, None] * cols
                    + index.reshape(-1)[None, :]).reshape(-1)
            gx = np.bincount(flat, weights=g.reshape(rows, -1).reshape(-1),
                             minlength=rows * cols)
            _accumulate(x, gx.reshape(x.shape).astype(x.data.dtype))
        else:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None),) * axis + (index,), g)
            _accumulate(x, gx)

    return _make(out_data, (x,), backward, "gather")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data, dtype=x.data.dtype)

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).astype(x.data.dtype))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(gg, x.shape).astype(x.data.dtype))

    return _make(out_data, (x,), backward, "sum")


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    out_data = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def backward(g):
        scale = 1.0 / n
        if axis is None:
            _accumulate(x, np.full(x.shape, np.asarray(g).reshape(()) * scale,
                                   dtype=x.data.dtype))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(x, (np.broadcast_to(gg, x.shape) * scale).astype(x.data.dtype))

    return _make(out_data, (x,), backward, "mean")


def global_avg_pool(x) -> Tensor:
    """[C, H, W] -> [C, 1, 1] spatial mean."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    out_data = x.data.mean(axis=(1, 2), keepdims=True)

    def backward(g):
        _accumulate(x, np.broadcast_to(g / (h * w), x.shape).astype(x.data.dtype))

    return _make(out_data, (x,), backward, "global_avg_pool")


# -- bilinear resampling ------------------------------------------------------

_BILINEAR_CACHE: dict = {}


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic [n_out, n_in] interpolation matrix, half-pixel centers."""
    key = (n_in, n_out)
    m = _BILINEAR_CACHE.get(key)
    if m is None:
        m = np.zeros((n_out, n_in), dtype=np.float64)
        scale = n_in / n_out
        for i in range(n_out):
            src = (i + 0.5) * scale - 0.5
            i0 = int(math.floor(src))
            frac = src - i0
            i0c = min(max(i0, 0), n_in - 1)
            i1c = min(max(i0 + 1, 0), n_in - 1)
            m[i, i0c] += 1.0 - frac
            m[i, i1c] += frac
        _BILINEAR_CACHE[key] = m
    return m


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resample of [C, H, W]; backward reuses the same weights."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample_bilinear expects [C,H,W], got {x.shape}")
    dt = x.data.dtype
    wr = bilinear_matrix(x.shape[1], out_h).astype(dt)
    wc = bilinear_matrix(x.shape[2], out_w).astype(dt)
    out_data = np.matmul(wr, np.matmul(x.data, wc.T))

    def backward(g):
        _accumulate(x, np.matmul(wr.T, np.matmul(g, wc)))

    return _make(out_data, (x,), backward, "upsample_bilinear")


# -- convolution --------------------------------------------------------------

_COL_INDEX_CACHE: dict = {}


def _col_indices(c_in, hp, wp, k, stride, dilation, out_h, out_w):
    key = (c_in, hp, wp, k, stride, dilation, out_h, out_w)
    idx = _COL_INDEX_CACHE.get(key)
    if idx is None:
        ci = np.arange(c_in).reshape(-1, 1, 1, 1, 1)
        ky = np.arange(k).reshape(1, -1, 1, 1, 1)
        kx = np.arange(k).reshape(1, 1, -1, 1, 1)
        oy = np.arange(out_h).reshape(1, 1, 1, -1, 1)
        ox = np.arange(out_w).reshape(1, 1, 1, 1, -1)
        flat = (ci * hp + oy * stride + ky * dilation) * wp + ox * stride + kx * dilation
        idx = flat.reshape(c_in * k * k, out_h * out_w)
        _COL_INDEX_CACHE[key] = idx
    return idx


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """Cross-correlation of [C_in,H,W] with [C_out,C_in,k,k], zero padding."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] and [O,C,k,k], got {x.shape}, {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv2d supports square kernels only")
    k = kh
    if k % 2 == 0:
        raise ShapeError("conv2d requires an odd kernel size")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[0]}, weight {c_in}")
    h, w = x.shape[1], x.shape[2]
    out_h = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out_w = (w + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv2d output would be {out_h}x{out_w} for input {h}x{w}")
    b = _as_tensor(bias) if bias is not None else None
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {b.shape} != ({c_out},)")

    hp, wp = h + 2 * padding, w + 2 * padding
    if padding:
        xp = np.zeros((c_in, hp, wp), dtype=x.data.dtype)
        xp[:, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    idx = _col_indices(c_in, hp, wp, k, stride, dilation, out_h, out_w)
    cols = xp.reshape(-1)[idx]                     # [C_in*k*k, L]
    w2 = weight.data.reshape(c_out, -1)
    out2 = w2 @ cols
    if b is not None:
        out2 = out2 + b.data[:, None]
    out_data = out2.reshape(c_out, out_h, out_w)

    def backward(g):
        g2 = g.reshape(c_out, -1)
        _accumulate(weight, (g2 @ cols.T).reshape(weight.shape))
        if b is not None:
            _accumulate(b, g2.sum(axis=1))
        if x.requires_grad:
            gcols = w2.T @ g2
            gxp = np.bincount(idx.reshape(-1), weights=gcols.reshape(-1),
                              minlength=c_in * hp * wp)
            gxp = gxp.reshape(c_in, hp, wp).astype(x.data.dtype)
            if padding:
                gxp = gxp[:, padding:padding + h, padding:padding + w]
            _accumulate(x, np.ascontiguousarray(gxp))

    parents = (x, weight) if b is None else (x, weight, b)
    return _make(out_data, parents, backward, "conv2d")
