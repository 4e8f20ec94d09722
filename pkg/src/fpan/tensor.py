"""Dense tensors with reverse-mode automatic differentiation.

Every activation in the network is a :class:`Tensor` wrapping a numpy array.
Operations record their inputs and a backward rule; calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that
requires them.

Precision is a module-wide mode: ``float32`` for training and inference,
``float64`` for finite-difference gradient checks::

    with precision("float64"):
        x = Tensor(np.random.randn(1, 3, 8, 8), requires_grad=True)
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_DTYPE: type = np.float32
_GRAD_ENABLED = True


def get_dtype() -> type:
    return _DTYPE


def set_dtype(dtype) -> None:
    """Set the module-wide element precision (``float32`` or ``float64``)."""
    global _DTYPE
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    _DTYPE = dt


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    previous = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """An n-d array node in the autodiff graph.

    Attributes:
        data: the values, in the precision active at creation time.
        requires_grad: whether gradients flow into this tensor.
        grad: accumulated gradient (same shape as ``data``) or None.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from this scalar, accumulating into leaf ``grad``.

        Intermediate gradients are released and the graph is consumed.
        """
        if self.data.size != 1:
            raise RuntimeError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None

    # convenience arithmetic ------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, factor: float) -> Tensor:
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def broadcast_add(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-(sample, channel) vector ``v[N,C,1,1]`` to every pixel of ``x``."""
    if x.ndim != 4 or v.ndim != 4 or v.shape != (x.shape[0], x.shape[1], 1, 1):
        raise DimensionError(f"broadcast_add: cannot add {v.shape} onto {x.shape}")
    return _make(x.data + v.data, (x, v), lambda g: (g, g.sum(axis=(2, 3), keepdims=True)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(
        np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    dt = x.data.dtype
    return _make(
        np.asarray(x.data.mean(), dtype=dt),
        (x,),
        lambda g: (np.broadcast_to(g / dt.type(n), shape).copy(),),
    )


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inverse),))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[N,C_i,H,W]`` tensors along channels, in argument order."""
    if not xs:
        raise DimensionError("concat_channels needs at least one input")
    n, _, h, w = xs[0].shape
    for t in xs:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {xs[0].shape}")
    if len(xs) == 1:
        return xs[0]
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``[N, C*r*r, H, W]`` into ``[N, C, r*H, r*W]``.

    ``out[n, c, h, w] = in[n, c*r*r + (h % r)*r + (w % r), h // r, w // r]``.
    """
    n, crr, h, w = x.shape
    if crr % (r * r):
        raise DimensionError(f"pixel_shuffle: {crr} channels not divisible by {r * r}")
    c = crr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, crr, h, w),)

    return _make(np.ascontiguousarray(out), (x,), backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse permutation of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise DimensionError(f"pixel_unshuffle: {x.shape} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def backward(g):
        return (g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr),)

    return _make(np.ascontiguousarray(out), (x,), backward)


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions (if any) are batch dimensions."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), backward)


def softmax_positions(x: Tensor) -> Tensor:
    """Per-sample softmax over the ``H*W`` positions of a ``[N,1,H,W]`` map."""
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"softmax_positions expects [N,1,H,W], got {x.shape}")
    z = x.data - x.data.max(axis=(2, 3), keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=(2, 3), keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=(2, 3), keepdims=True)),)

    return _make(p, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis (rows of a similarity matrix)."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each sample of ``x[N,C,1,1]`` over C, then apply ``gamma``/``beta``."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise DimensionError(f"layer_norm expects [N,C,1,1], got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine params must have shape ({c},)")
    v = x.data.reshape(x.shape[0], c)
    mu = v.mean(axis=1, keepdims=True)
    var = v.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        g2 = g.reshape(v.shape)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx.reshape(x.shape), dgamma, dbeta

    return _make(out.reshape(x.shape).astype(x.data.dtype), (x, gamma, beta), backward)


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, lowered to a patch matrix product.

    Args:
        x: input ``[N, Cin, H, W]``.
        weight: kernel ``[Cout, Cin, kh, kw]``.
        bias: optional ``[Cout]``.
        stride: step between output samples.
        pad: zero padding added to each spatial border.

    Returns:
        ``[N, Cout, H', W']`` with ``H' = (H + 2*pad - kh) // stride + 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    if pad:
        xp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    # rows: (n, ho, wo); columns: (cin, kh, kw)
    win = as_strided(xp, (n, ho, wo, cin, kh, kw), (s0, s2 * stride, s3 * stride, s1, s2, s3), writeable=False)
    cols = win.reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        dw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def conv2d_direct(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None, stride: int = 1, pad: int = 0):
    """Reference convolution by explicit loops. Slow; used as a test oracle."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(cin):
                        for ky in range(kh):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - pad
                                if 0 <= ix < w:
                                    acc += float(x[b, c, iy, ix]) * float(weight[o, c, ky, kx])
                    out[b, o, oy, ox] = acc
    return out


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1
