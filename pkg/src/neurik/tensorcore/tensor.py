"""Dense tensors with a dynamic reverse-mode tape.

Ops executed inside ``with Tape() as tape:`` are recorded when any input
requires grad; outside a tape nothing is recorded, which is the inference
path. ``backward(tape, root)`` replays the record in reverse.

Broadcasting follows numpy; backward rules sum gradients back down to each
input's shape.
"""

import threading

import numpy as np

from .. import kernels
from ..errors import ContractViolation, NumericalFault

DTYPES = {32: np.float32, 64: np.float64}

_local = threading.local()


def current_tape():
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractViolation(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def permute(self, axes):
        return permute(self, axes)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of executed ops; one per forward pass."""

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = current_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def __len__(self):
        return len(self.nodes)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    # python scalars adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, a)
    return a, b


def _finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericalFault(f"non-finite values produced by {what}")


def _result(data, parents, backward, what):
    _finite(data, what)
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, parents, backward))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, what):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{what}: shapes {a.shape} and {b.shape} do not broadcast") from None


def backward(tape, root):
    """Populate ``.grad`` of every leaf reachable from scalar ``root``.

    Gradients accumulate into existing buffers.
    """
    if root.data.size != 1:
        raise ContractViolation(f"backward root must be scalar, got shape {root.shape}")
    if root._tape is not tape:
        raise ContractViolation("backward root was not produced on this tape")
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for p, pg in zip(node.parents, node.backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._tape is None:
                p.grad += pg
            else:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


# -- elementwise --------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data  # non-finite results are reported by _result

    def bw(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), bw, "div")


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a):
    if (a.data < 0).any():
        raise ContractViolation("sqrt of negative input")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def arccos(a):
    if (np.abs(a.data) > 1.0).any():
        raise ContractViolation("arccos input outside [-1, 1]; clamp before calling")
    x = a.data
    return _result(np.arccos(x), (a,), lambda g: (-g / np.sqrt(1.0 - x * x),), "arccos")


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient passes only where the input was inside."""
    x = a.data
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (x >= lo_) & (x <= hi_)
    return _result(np.clip(x, lo_, hi_).astype(x.dtype), (a,), lambda g: (g * inside,), "clamp")


def silu(a):
    """x * sigmoid(x); the smooth nonlinearity used throughout the model."""
    x = a.data
    s = 1.0 / (1.0 + np.exp(-x))
    return _result(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),), "silu")


# -- linear algebra -----------------------------------------------------------


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractViolation(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = _unbroadcast(g @ _swap(b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(a.data) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None):
    """x @ w + b over the last axis of x; w is (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ContractViolation(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ContractViolation(f"linear: bias {b.shape} does not match weight {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out_shape = x.shape[:-1] + (w.shape[1],)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out.reshape(out_shape), parents, bw, "linear")


def cross(a, b):
    """Cross product along the last axis (size 3)."""
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ContractViolation(f"cross needs trailing size 3, got {a.shape} and {b.shape}")
    _check_broadcast(a, b, "cross")

    def bw(g):
        return _unbroadcast(np.cross(b.data, g), a.shape), _unbroadcast(np.cross(g, a.data), b.shape)

    return _result(np.cross(a.data, b.data), (a, b), bw, "cross")


# -- shape --------------------------------------------------------------------


def transpose(a):
    if a.ndim < 2:
        raise ContractViolation(f"transpose needs ndim >= 2, got {a.shape}")
    return _result(_swap(a.data), (a,), lambda g: (_swap(g),), "transpose")


def permute(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractViolation(f"permute axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"cannot reshape {a.shape} to {shape}") from None
    src = a.shape
    return _result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ContractViolation(f"concat: shape {t.shape} incompatible with {ref} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        out = []
        for i in range(len(tensors)):
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return out

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def getitem(a, idx):
    """Basic (slice/int) indexing."""
    out = a.data[idx]
    src_shape = a.shape

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        full[idx] += g
        return (full,)

    return _result(np.array(out), (a,), bw, "getitem")


# -- reductions ---------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(np.asarray(out), (a,), lambda g: (_expand(g, shape, axis, keepdims).copy(),), "sum")


def mean(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(np.asarray(out).size, 1)
    return _result(np.asarray(out), (a,), lambda g: (_expand(g, shape, axis, keepdims) / n,), "mean")


# -- normalizations -----------------------------------------------------------


def softmax(a, axis=-1):
    moved = np.moveaxis(a.data, axis, -1)
    mshape = moved.shape
    y2 = kernels.softmax_rows(np.ascontiguousarray(moved.reshape(-1, mshape[-1])))
    out = np.moveaxis(y2.reshape(mshape), -1, axis)

    def bw(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(-1, mshape[-1]))
        gx = kernels.softmax_rows_bwd(gm, y2)
        return (np.moveaxis(gx.reshape(mshape), -1, axis),)

    return _result(out, (a,), bw, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ContractViolation(f"layer_norm: gamma {gamma.shape}/beta {beta.shape} vs features {d}")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, rstd = kernels.layer_norm_fwd(x2, gamma.data, beta.data, eps)

    def bw(g):
        gx, gg, gb = kernels.layer_norm_bwd(np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gamma.data)
        return gx.reshape(x.shape), gg, gb

    return _result(y.reshape(x.shape), (x, gamma, beta), bw, "layer_norm")
