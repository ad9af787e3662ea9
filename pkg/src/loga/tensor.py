"""Dense float tensors with reverse-mode automatic differentiation.

Storage is a contiguous row-major numpy array (float32 or float64). Each
operation records its parents and a closure mapping the output gradient to
input gradients; ``Tensor.backward`` walks the graph in reverse topological
order.

Only the operations the model needs are provided, and broadcasting is limited
to what those operations require (batched matmul against a shared matrix and
per-channel bias/scale vectors).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class GraphError(RuntimeError):
    """Raised when the autodiff contract is violated (e.g. non-scalar root)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
                dtype = data.dtype
            elif isinstance(data, Tensor):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype, order="C")
        if self.data.dtype not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {self.data.dtype}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, data: np.ndarray, parents: Tuple["Tensor", ...], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data)
        out.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr, dtype=dtype)


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Propagate d(root)/d(node) to every node reachable from a scalar root.

    Leaf gradients accumulate across calls; interior nodes hold the gradient
    of the most recent pass.
    """
    if root.size != 1:
        raise GraphError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(_toposort(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _check_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return Tensor._wrap(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return Tensor._wrap(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return Tensor._wrap(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._wrap(x.data * c, (x,), lambda g: (g * c,), "scale")


def _channel_view(v: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = v.shape[0]
    return v.reshape(shape)


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D vector along ``axis`` of ``x``."""
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match axis {axis} of {x.shape}")
    others = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        return g, g.sum(axis=others)

    return Tensor._wrap(x.data + _channel_view(b.data, x.ndim, axis), (x, b), bw, "bias_add")


def channel_mul(x: Tensor, s: Tensor, axis: int = -1) -> Tensor:
    """Multiply ``x`` by a 1-D vector along ``axis``."""
    axis = axis % x.ndim
    if s.ndim != 1 or s.shape[0] != x.shape[axis]:
        raise ShapeError(f"channel_mul: scale {s.shape} does not match axis {axis} of {x.shape}")
    others = tuple(i for i in range(x.ndim) if i != axis)
    sv = _channel_view(s.data, x.ndim, axis)

    def bw(g):
        return g * sv, (g * x.data).sum(axis=others)

    return Tensor._wrap(x.data * sv, (x, s), bw, "channel_mul")


def column_scale(x: Tensor, w: Tensor) -> Tensor:
    """Scale column ``i`` of each [D, L] slice of ``x`` ([B, D, L]) by ``w[b, i]`` ([B, L])."""
    if x.ndim != 3 or w.shape != (x.shape[0], x.shape[2]):
        raise ShapeError(f"column_scale: weights {w.shape} do not match columns of {x.shape}")
    wv = w.data[:, None, :]

    def bw(g):
        return g * wv, (g * x.data).sum(axis=1)

    return Tensor._wrap(x.data * wv, (x, w), bw, "column_scale")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return Tensor._wrap(out, (x,), lambda g: (g.reshape(src),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.size,))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._wrap(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise ShapeError(f"concat: {t.shape} incompatible with {tensors[0].shape} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def take(x: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis``; repeated indices are allowed."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim

    def bw(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return Tensor._wrap(np.take(x.data, idx, axis=axis), (x,), bw, "take")


def pick(x: Tensor, labels: Sequence[int]) -> Tensor:
    """For a 2-D ``x`` return ``x[n, labels[n]]`` for every row."""
    if x.ndim != 2:
        raise ShapeError(f"pick: expected a 2-D tensor, got {x.shape}")
    lab = np.asarray(labels, dtype=np.intp)
    rows = np.arange(x.shape[0])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, lab] = g
        return (gx,)

    return Tensor._wrap(x.data[rows, lab], (x,), bw, "pick")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._wrap(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._wrap(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._wrap(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def _reduce_axes(x: Tensor, axis) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % x.ndim for a in axis)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    axes = _reduce_axes(x, axis)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return Tensor._wrap(x.data.sum(axis=axes), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _reduce_axes(x, axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / count, axes), shape).copy(),)

    return Tensor._wrap(x.data.mean(axis=axes), (x,), bw, "mean")


def mean_pool_axis(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along one axis."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"mean_pool_axis: axis {axis} invalid for shape {x.shape}")
    return mean(x, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched over a shared leading axis.

    A 2-D operand paired with a 3-D one is applied to every batch entry.
    """
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch extents differ in {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        if ga is not None and a.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if gb is not None and b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return Tensor._wrap(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias`` for ``x`` of shape [N, in]."""
    out = matmul(x, transpose(weight))
    return out if bias is None else bias_add(out, bias, axis=-1)


# ---------------------------------------------------------------------------
# normalisation and probability


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._wrap(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._wrap(out, (x,), bw, "log_softmax")


class BatchNormStats:
    """Running mean/variance buffers for one batchnorm layer (mutated in train mode)."""

    __slots__ = ("mean", "var")

    def __init__(self, mean: np.ndarray, var: np.ndarray):
        self.mean = mean
        self.var = var


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
    channel_axis: int = 0,
) -> Tensor:
    """Per-channel normalisation; statistics are taken over every other axis.

    Train mode uses (biased) batch statistics and updates ``stats`` in place
    by exponential moving average; eval mode uses ``stats`` only.
    """
    axis = channel_axis % x.ndim
    others = tuple(i for i in range(x.ndim) if i != axis)
    n = int(np.prod([x.shape[i] for i in others]))
    # statistics and normalisation accumulate in float64, the output is cast back
    xd = x.data.astype(np.float64)
    if mode == "train":
        mu = xd.mean(axis=others, keepdims=True)
        var = xd.var(axis=others, keepdims=True)
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu.reshape(-1)
        stats.var[...] = (1 - momentum) * stats.var + momentum * var.reshape(-1)
    elif mode == "eval":
        mu = _channel_view(stats.mean, x.ndim, axis)
        var = _channel_view(stats.var, x.ndim, axis)
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    gv = _channel_view(gamma.data, x.ndim, axis)
    out = xhat * gv + _channel_view(beta.data, x.ndim, axis)

    def bw(g):
        dgamma = (g * xhat).sum(axis=others)
        dbeta = g.sum(axis=others)
        dxhat = g * gv
        if mode == "train":
            dx = (inv_std / n) * (
                n * dxhat
                - dxhat.sum(axis=others, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=others, keepdims=True)
            )
        else:
            dx = dxhat * inv_std
        return dx.astype(x.dtype, copy=False), dgamma.astype(gamma.dtype, copy=False), dbeta.astype(beta.dtype, copy=False)

    return Tensor._wrap(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "batchnorm")


# ---------------------------------------------------------------------------
# convolutions


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Unpadded cross-correlation.

    ``x`` is [Cin, W] or batched [N, Cin, W]; ``kernel`` is [Cout, Cin, S].
    Output width is ``(W - S) // stride + 1``.
    """
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or kernel.ndim != 3 or kernel.shape[1] != xd.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    n, cin, width = xd.shape
    cout, _, s = kernel.shape
    if width < s:
        raise ShapeError(f"conv1d: empty output, input width {width} < kernel width {s}")
    wout = (width - s) // stride + 1
    # windows: [N, Cin, Wout, S] -> [N, Wout, Cin*S]
    windows = sliding_window_view(xd, s, axis=2)[:, :, ::stride][:, :, :wout]
    cols = windows.transpose(0, 2, 1, 3).reshape(n, wout, cin * s)
    kmat = kernel.data.reshape(cout, cin * s)
    out = np.matmul(cols, kmat.T).transpose(0, 2, 1)  # [N, Cout, Wout]

    def bw(g):
        gb = g if batched else g[None]
        gt = gb.transpose(0, 2, 1)  # [N, Wout, Cout]
        gk = None
        gx = None
        if kernel.requires_grad:
            gk = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(kernel.shape)
        if x.requires_grad:
            gcols = np.matmul(gt, kmat).reshape(n, wout, cin, s)
            gxd = np.zeros_like(xd)
            span = stride * (wout - 1) + 1
            for k in range(s):
                gxd[:, :, k : k + span : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxd if batched else gxd[0]
        return gx, gk

    return Tensor._wrap(out if batched else out[0], (x, kernel), bw, "conv1d")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation; ``x`` is [N, Cin, H, W], ``kernel`` [Cout, Cin, kh, kw]."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    n, cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: empty output for input {x.shape} with kernel {kernel.shape}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    kmat = kernel.data.reshape(cout, -1)
    out = (cols @ kmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gk = (gm.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ kmat).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gk

    return Tensor._wrap(out, (x, kernel), bw, "conv2d")


# ---------------------------------------------------------------------------
# distances


def euclidean_distance(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise L2 distance over the last axis; the subgradient at distance 0 is 0."""
    _check_same_shape("euclidean_distance", a, b)
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=-1))

    def bw(g):
        safe = np.where(d > 0, d, 1)
        unit = np.where((d > 0)[..., None], diff / safe[..., None], 0)
        ga = g[..., None] * unit
        return ga, -ga

    return Tensor._wrap(d, (a, b), bw, "euclidean_distance")


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def bw(g):
        safe = np.where(n > 0, n, 1)
        return (np.expand_dims(g / safe * (n > 0), axis) * x.data,)

    return Tensor._wrap(n, (x,), bw, "l2_norm")


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity over the last axis."""
    _check_same_shape("cosine_similarity", a, b)
    na = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=-1, keepdims=True))
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    denom = np.maximum(na * nb, eps)
    out = (dot / denom)[..., 0]

    def bw(g):
        g = g[..., None]
        ga = g * (b.data / denom - dot * a.data / (np.maximum(na, eps) ** 2 * denom))
        gb = g * (a.data / denom - dot * b.data / (np.maximum(nb, eps) ** 2 * denom))
        return ga, gb

    return Tensor._wrap(out, (a, b), bw, "cosine_similarity")
