"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op builds a node holding its parents and a closure mapping the output
gradient to one gradient per parent.  ``backward`` walks the graph in reverse
topological order.  There is no global state, so distinct graphs can be built
and differentiated on different threads.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(ValueError):
    """Shape or usage error raised by tensor ops."""


class NonFiniteError(FloatingPointError):
    """An op produced (or received) NaN/Inf."""


class BackwardError(RuntimeError):
    """Invalid call to :meth:`Tensor.backward`."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(f"{where}: non-finite value at index {tuple(int(i) for i in bad)}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, _op="leaf"):
        arr = np.array(data, dtype=np.float64, copy=True) if _op == "leaf" else data
        if _op == "leaf":
            _check_finite(arr, "Tensor")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: BackwardFn | None = _backward
        self._op = _op
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}, op={self._op})"

    # -- autodiff ---------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into every tracked tensor.

        A graph can be walked once.  Leaves still holding a gradient from an
        earlier backward must be reset with ``zero_grad`` first.
        """
        if self.data.size != 1:
            raise BackwardError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise BackwardError("loss is not connected to any gradient-tracked tensor")
        if self._consumed:
            raise BackwardError("backward() already ran on this graph; rebuild it after zero_grad()")

        order = _topological_order(self)
        stale = [t for t in order if t.is_leaf and t.requires_grad and t.grad is not None]
        if stale:
            raise BackwardError(
                f"{len(stale)} leaf tensor(s) still hold gradients; call zero_grad() before backward()"
            )

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            node.grad = g
            node._consumed = True
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise AssertionError(f"{node._op}: grad shape {pg.shape} != input shape {parent.shape}")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def make_op(out: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, name: str) -> Tensor:
    """Wrap ``out`` as the result of a differentiable op.

    ``backward`` receives the output gradient and returns one array (or None)
    per parent, each with that parent's shape.
    """
    out = np.asarray(out, dtype=np.float64)
    _check_finite(out, name)
    requires_grad = any(p.requires_grad for p in parents)
    if not requires_grad:
        return Tensor(out, _parents=(), _backward=None, _op=name)
    return Tensor(out, True, _parents=tuple(parents), _backward=backward, _op=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op(out, (a, b), backward, "mul")


def pow_(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return make_op(out, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return make_op(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise NonFiniteError("log: non-positive input")
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return make_op(out, (a,), backward, "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def backward(g):
        return (g * mask,)

    return make_op(out, (a,), backward, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth, so finite differences behave)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return make_op(out, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise TensorError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return make_op(out, (a,), backward, "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise TensorError(f"permute axes {axes} invalid for rank {a.ndim}")
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_op(out, (a,), backward, "permute")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise TensorError(f"transpose needs rank >= 2, got {a.shape}")
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def index(a: Tensor, idx) -> Tensor:
    out = np.array(a.data[idx], dtype=np.float64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(out, (a,), backward, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise TensorError("concat of empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise TensorError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.array(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor, row_stable: bool = False) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    With ``row_stable`` each output row is computed by its own single-row
    product, so the value of a row never depends on where it sits in ``a``.
    BLAS kernels treat edge rows of a block differently, which otherwise
    breaks bit-exact equivariance under row permutations.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise TensorError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        if row_stable:
            rows = [np.matmul(a.data[..., i:i + 1, :], b.data) for i in range(a.shape[-2])]
            out = np.concatenate(rows, axis=-2)
        else:
            out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise TensorError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(out, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise TensorError(f"softmax needs a non-empty last axis, got {x.shape}")
    _check_finite(x.data, "softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_op(out, (x,), backward, "softmax")


def log_softmax_lastdim(x: Tensor) -> Tensor:
    _check_finite(x.data, "log_softmax input")
    m = x.data.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=-1, keepdims=True))
    out = x.data - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_op(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation over ``x`` (B, C_in, H, W) via im2col."""
    if x.ndim != 4 or weight.ndim != 4:
        raise TensorError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C_in, H, W = x.shape
    C_out, Cg, kh, kw = weight.shape
    if C_in % groups or C_out % groups:
        raise TensorError(f"channels ({C_in} in, {C_out} out) not divisible by groups={groups}")
    if Cg * groups != C_in:
        raise TensorError(f"conv2d channel mismatch: input has {C_in}, weight expects {Cg * groups}")
    Ho = conv_output_size(H, kh, stride, padding, dilation)
    Wo = conv_output_size(W, kw, stride, padding, dilation)
    if Ho < 1 or Wo < 1:
        raise TensorError(f"input {H}x{W} too small for kernel {kh}x{kw} with dilation {dilation}")
    Og = C_out // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((B, C_in, kh, kw, Ho, Wo))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (Ho - 1) + 1:stride, c0:c0 + stride * (Wo - 1) + 1:stride]
    K = Cg * kh * kw
    cols_g = cols.reshape(B, groups, K, Ho * Wo)
    w_g = weight.data.reshape(groups, Og, K)
    out = np.matmul(w_g, cols_g).reshape(B, C_out, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, C_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g_g = g.reshape(B, groups, Og, Ho * Wo)
        gw = np.matmul(g_g, np.swapaxes(cols_g, -1, -2)).sum(axis=0).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(np.swapaxes(w_g, -1, -2), g_g).reshape(B, C_in, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    gxp[:, :, r0:r0 + stride * (Ho - 1) + 1:stride, c0:c0 + stride * (Wo - 1) + 1:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op(out, parents, backward, "conv2d")


def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Row-stochastic (out_size, in_size) resampling matrix, align_corners=False."""
    m = np.zeros((out_size, in_size))
    scale = in_size / out_size
    for o in range(out_size):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 4:
        raise TensorError(f"upsample_bilinear expects (B, C, H, W), got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise TensorError(f"output size must be positive, got {out_h}x{out_w}")
    H, W = x.shape[2:]
    mh = bilinear_matrix(H, out_h)
    mw = bilinear_matrix(W, out_w)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return make_op(out, (x,), backward, "upsample_bilinear")
