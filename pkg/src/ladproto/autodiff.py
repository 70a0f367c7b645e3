"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the operation set the embedding network and the episodic
losses need: broadcast arithmetic, exp/log/sqrt, reductions, stacking and
row indexing, 3x3-style convolution, max pooling, and global average
pooling. Gradients accumulate into ``Tensor.grad`` during ``backward`` in a
fixed topological order, so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError


class Tensor:
    """A dense array with an optional gradient slot and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = _backward

    # numpy interop: np.asarray(t) reads the values (no gradient tracking)
    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return index_rows(self, idx)

    def backward(self, upstream=None) -> None:
        """Accumulate gradients of ``self`` into every reachable tensor.

        ``upstream`` defaults to 1 for scalars. Calling this on a tensor
        with no taped computation is a state error.
        """
        if not self.requires_grad:
            raise StateError("backward called on a tensor with no taped computation")
        if upstream is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"implicit upstream gradient needs a scalar, got {self.shape}"
                )
            upstream = np.ones_like(self.data)
        upstream = np.asarray(upstream, dtype=self.data.dtype)
        if upstream.shape != self.data.shape:
            raise ShapeError(
                f"upstream gradient shape {upstream.shape} != value shape {self.shape}"
            )

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

        grads: dict[int, np.ndarray] = {id(self): upstream}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data + b.data
    return Tensor(
        out,
        _parents=(a, b),
        _backward=lambda g: (
            _unbroadcast(g, a.data.shape),
            _unbroadcast(g, b.data.shape),
        ),
    )


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data - b.data
    return Tensor(
        out,
        _parents=(a, b),
        _backward=lambda g: (
            _unbroadcast(g, a.data.shape),
            _unbroadcast(-g, b.data.shape),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data * b.data
    return Tensor(
        out,
        _parents=(a, b),
        _backward=lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data / b.data
    return Tensor(
        out,
        _parents=(a, b),
        _backward=lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def square(a) -> Tensor:
    a = astensor(a)
    return Tensor(
        a.data * a.data,
        _parents=(a,),
        _backward=lambda g: (2.0 * g * a.data,),
    )


def sqrt(a) -> Tensor:
    a = astensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = astensor(a)
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,))


def log(a) -> Tensor:
    a = astensor(a)
    return Tensor(np.log(a.data), _parents=(a,), _backward=lambda g: (g / a.data,))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; subgradient 0 where the floor wins."""
    a = astensor(a)
    mask = a.data > floor
    return Tensor(
        np.where(mask, a.data, floor),
        _parents=(a,),
        _backward=lambda g: (g * mask,),
    )


def relu(a) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    return Tensor(a.data * mask, _parents=(a,), _backward=lambda g: (g * mask,))


def tsum(a, axis=None) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        expanded = np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=backward)


def tmean(a, axis=None) -> Tensor:
    a = astensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [astensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor(out, _parents=tuple(ts), _backward=backward)


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    return Tensor(
        a.data.reshape(shape),
        _parents=(a,),
        _backward=lambda g: (g.reshape(a.data.shape),),
    )


def index_rows(a, idx) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into place."""
    a = astensor(a)
    out = a.data[idx]

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return Tensor(out, _parents=(a,), _backward=backward)


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim == 2 and b.ndim == 1:
        out = a.data @ b.data
        return Tensor(
            out,
            _parents=(a, b),
            _backward=lambda g: (np.outer(g, b.data), a.data.T @ g),
        )
    if a.ndim == 2 and b.ndim == 2:
        out = a.data @ b.data
        return Tensor(
            out,
            _parents=(a, b),
            _backward=lambda g: (g @ b.data.T, a.data.T @ g),
        )
    raise ShapeError(f"matmul supports 2D@1D and 2D@2D, got {a.shape} @ {b.shape}")


def softmax(z) -> Tensor:
    """Numerically stabilized softmax of a 1-D tensor.

    The max shift is a constant offset, which leaves both the value and the
    gradient of the softmax unchanged.
    """
    z = astensor(z)
    if z.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {z.shape}")
    shifted = sub(z, float(z.data.max()))
    e = exp(shifted)
    return div(e, tsum(e))


# -- spatial ops [B, C, H, W] -------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[B, C, Hp, Wp] -> [B, C*kh*kw, Ho*Wo] for stride-1 windows."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def conv2d(x, weight, bias, padding: int = 1) -> Tensor:
    """Stride-1 2-D convolution (cross-correlation) with zero padding.

    x: [B, C_in, H, W]; weight: [C_out, C_in, kh, kw]; bias: [C_out].
    """
    x, weight, bias = astensor(x), astensor(weight), astensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d expects x[B,C,H,W] and w[O,C,kh,kw], got {x.shape} and "
            f"{weight.shape}"
        )
    b, c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_in != c_w:
        raise ShapeError(
            f"conv2d channel mismatch: input has {c_in}, weight expects {c_w}"
        )
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} too large for input {h}x{w} with "
            f"padding {padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw)  # [B, C*kh*kw, Ho*Wo]
    k = c_in * kh * kw
    p = ho * wo
    # one large matmul: [O, K] @ [K, B*P]
    cols_flat = cols.transpose(1, 0, 2).reshape(k, b * p)
    w2 = weight.data.reshape(c_out, k)
    out_flat = w2 @ cols_flat  # [O, B*P]
    out = out_flat.reshape(c_out, b, p).transpose(1, 0, 2) + bias.data[None, :, None]
    out = out.reshape(b, c_out, ho, wo)

    def backward(g):
        gf = g.reshape(b, c_out, p).transpose(1, 0, 2).reshape(c_out, b * p)
        gw = (gf @ cols_flat.T).reshape(weight.data.shape)
        gb = gf.sum(axis=1)
        gcols = (w2.T @ gf).reshape(k, b, p).transpose(1, 0, 2)
        gcols = gcols.reshape(b, c_in, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + ho, j : j + wo] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    return Tensor(out, _parents=(x, weight, bias), _backward=backward)


def maxpool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling with stride = size; trailing rows and
    columns that do not fill a window are dropped."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool2d window {size} too large for input {h}x{w}")
    trimmed = x.data[:, :, : ho * size, : wo * size]
    tiles = (
        trimmed.reshape(b, c, ho, size, wo, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho, wo, size * size)
    )
    idx = tiles.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gtiles = np.zeros_like(tiles)
        np.put_along_axis(gtiles, idx[..., None], g[..., None], axis=-1)
        gt = (
            gtiles.reshape(b, c, ho, wo, size, size)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, ho * size, wo * size)
        )
        if gt.shape == x.data.shape:
            return (gt,)
        gx = np.zeros_like(x.data)
        gx[:, :, : ho * size, : wo * size] = gt
        return (gx,)

    return Tensor(out, _parents=(x,), _backward=backward)


def global_mean_pool(x) -> Tensor:
    """Average over the spatial axes: [B, C, H, W] -> [B, C]."""
    x = astensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_mean_pool expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy(),)

    return Tensor(out, _parents=(x,), _backward=backward)
