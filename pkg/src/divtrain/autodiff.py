"""Reverse-mode automatic differentiation on float64 numpy arrays.

Every primitive's vector-Jacobian product is itself written with primitives,
so ``grad(..., create_graph=True)`` returns tensors that are part of a new
graph and can be differentiated again (double backprop).
"""

from __future__ import annotations

import contextlib
import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


class GraphError(RuntimeError):
    """Raised when a gradient is requested through a graph that does not exist."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, enabled
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array that optionally sits in a differentiable graph.

    Leaves have ``op is None``. Interior nodes keep the primitive name, their
    parent tensors, the keyword attributes the primitive was called with and a
    closure computing the vector-Jacobian product.
    """

    __slots__ = ("data", "requires_grad", "op", "inputs", "attrs", "_vjp", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.op: str | None = None
        self.inputs: tuple[Tensor, ...] = ()
        self.attrs: dict = {}
        self._vjp: Callable | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6, threshold=8)}{flag})"

    def __len__(self):
        return len(self.data)

    # operator sugar, all routed through primitives
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, **attrs) -> Tensor:
    out = Tensor(value)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.op = op
        out.inputs = tuple(inputs)
        out.attrs = attrs
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# elementwise and shape primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == tuple(shape):
        return g
    return sum_to(g, shape)


def _shape_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("add", a, b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return _node("add", a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("sub", a, b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(neg(g), b.shape) if needs[1] else None)

    return _node("sub", a.data - b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node("neg", -a.data, (a,), lambda g, needs: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("mul", a, b)

    def vjp(g, needs):
        return (_unbroadcast(mul(g, b), a.shape) if needs[0] else None,
                _unbroadcast(mul(g, a), b.shape) if needs[1] else None)

    return _node("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _shape_check("div", a, b)

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(div(g, b), a.shape)
        if needs[1]:
            gb = _unbroadcast(neg(div(mul(g, out_ref()), b)), b.shape)
        return ga, gb

    out = _node("div", a.data / b.data, (a, b), vjp)
    out_ref = weakref.ref(out)
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node("square", a.data * a.data, (a,), lambda g, needs: (mul(g, mul(a, 2.0)),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    out = _node("sqrt", np.sqrt(a.data), (a,), lambda g, needs: (div(mul(g, 0.5), out_ref()),))
    out_ref = weakref.ref(out)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _node("exp", np.exp(a.data), (a,), lambda g, needs: (mul(g, out_ref()),))
    out_ref = weakref.ref(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return _node("log", np.log(a.data), (a,), lambda g, needs: (div(g, a),))


def leaky_relu(a, alpha: float = 0.1) -> Tensor:
    """``x`` for ``x >= 0`` and ``alpha * x`` otherwise; slope at 0 is 1."""
    if not alpha > 0:
        raise ValueError(f"leaky_relu: alpha must be positive, got {alpha}")
    a = as_tensor(a)
    slope = np.where(a.data >= 0, 1.0, alpha)
    mask = Tensor(slope)
    return _node("leaky_relu", a.data * slope, (a,), lambda g, needs: (mul(g, mask),), alpha=alpha)


def clip(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp with a pass-through gradient inside ``[lo, hi]`` and zero outside."""
    a = as_tensor(a)
    inside = np.ones_like(a.data)
    if lo is not None:
        inside[a.data < lo] = 0.0
    if hi is not None:
        inside[a.data > hi] = 0.0
    mask = Tensor(inside)
    return _node("clip", np.clip(a.data, lo, hi), (a,), lambda g, needs: (mul(g, mask),), lo=lo, hi=hi)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _node("reshape", value, (a,), lambda g, needs: (reshape(g, a.shape),), shape=shape)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected a 2-D tensor, got shape {a.shape}")
    return _node("transpose", a.data.T, (a,), lambda g, needs: (transpose(g),))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    value = a.data.sum(axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _node("sum", value, (a,), vjp, axis=axes, keepdims=keepdims)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def vjp(g, needs):
        return (mul(broadcast_to(reshape(g, kept_shape), a.shape), 1.0 / count),)

    return _node("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), vjp, axis=axes, keepdims=keepdims)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    value = np.broadcast_to(a.data, shape)
    return _node("broadcast_to", np.array(value), (a,), lambda g, needs: (sum_to(g, a.shape),), shape=shape)


def _sum_to_np(x: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    out = x.sum(axis=axes, keepdims=True) if axes else x
    return out.reshape(shape)


def sum_to(a, shape) -> Tensor:
    """Sum a broadcast tensor back down to ``shape`` (adjoint of ``broadcast_to``)."""
    a = as_tensor(a)
    shape = tuple(shape)
    return _node("sum_to", _sum_to_np(a.data, shape), (a,), lambda g, needs: (broadcast_to(g, a.shape),), shape=shape)


def reduce_max(a, axis: int = -1) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    onehot = np.zeros_like(a.data)
    np.put_along_axis(onehot, idx, 1.0, axis=axis)
    mask = Tensor(onehot)
    kept_shape = tuple(1 if i == axis else s for i, s in enumerate(a.shape))
    value = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def vjp(g, needs):
        return (mul(broadcast_to(reshape(g, kept_shape), a.shape), mask),)

    return _node("max", value, (a,), vjp, axis=axis)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g, needs):
        return (matmul(g, transpose(b)) if needs[0] else None,
                matmul(transpose(a), g) if needs[1] else None)

    return _node("matmul", a.data @ b.data, (a, b), vjp)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    return reduce_sum(mul(a, b))


def bias_add(x, b) -> Tensor:
    """Add a per-channel bias along axis 1 (works for (B, F) and (B, C, H, W))."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.ndim < 2 or x.shape[1] != b.shape[0]:
        raise ValueError(f"bias_add: bias shape {b.shape} does not match axis 1 of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    other_axes = (0,) + tuple(range(2, x.ndim))

    def vjp(g, needs):
        return (g if needs[0] else None, reduce_sum(g, axis=other_axes) if needs[1] else None)

    return _node("bias_add", x.data + b.data.reshape(view), (x, b), vjp)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Patches of a same-padded NCHW array as a (C*k*k, N*H*W) matrix."""
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(np.ascontiguousarray(x.transpose(1, 0, 2, 3)), ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((c, k, k, n, h, w))
    for a in range(k):
        for b in range(k):
            cols[:, a, b] = xp[:, :, a:a + h, b:b + w]
    return cols.reshape(c * k * k, n * h * w)


def _conv2d_np(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, _, h, wd = x.shape
    o, k = w.shape[0], w.shape[2]
    out = w.reshape(o, -1) @ _im2col(x, k)
    return np.ascontiguousarray(out.reshape(o, n, h, wd).transpose(1, 0, 2, 3))


def _conv2d_wgrad_np(x: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    c = x.shape[1]
    o = g.shape[1]
    gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
    return (gmat @ _im2col(x, k).T).reshape(o, c, k, k)


def conv2d(x, w) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding. x: NCHW, w: OCKK, K odd."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {w.shape[2:]}")

    def vjp(g, needs):
        gx = conv2d(g, conv_flip(w)) if needs[0] else None
        gw = conv2d_wgrad(x, g, w.shape[2]) if needs[1] else None
        return gx, gw

    return _node("conv2d", _conv2d_np(x.data, w.data), (x, w), vjp)


def conv2d_wgrad(x, g, k: int) -> Tensor:
    """Weight gradient of ``conv2d``; bilinear in (x, g)."""
    x, g = as_tensor(x), as_tensor(g)

    def vjp(G, needs):
        gx = conv2d(g, conv_flip(G)) if needs[0] else None
        gg = conv2d(x, G) if needs[1] else None
        return gx, gg

    return _node("conv2d_wgrad", _conv2d_wgrad_np(x.data, g.data, k), (x, g), vjp, k=k)


def conv_flip(w) -> Tensor:
    """Swap in/out channels and rotate the kernel 180 degrees (self-adjoint)."""
    w = as_tensor(w)
    value = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _node("conv_flip", value, (w,), lambda g, needs: (conv_flip(g),))


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    x = x[:, :, : 2 * h2, : 2 * w2]
    return x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)


def _pool_scatter_np(g: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    n, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    buf = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
    buf = buf.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    if (2 * h2, 2 * w2) != (h, w):
        buf = np.pad(buf, ((0, 0), (0, 0), (0, h - 2 * h2), (0, w - 2 * w2)))
    return buf


def maxpool2d(x) -> Tensor:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"maxpool2d: expected NCHW input, got shape {x.shape}")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ValueError(f"maxpool2d: spatial size {x.shape[2:]} is too small to pool")
    win = _pool_windows(x.data)
    idx = np.argmax(win, axis=-1)
    value = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    in_shape = x.shape

    def vjp(g, needs):
        return (pool_scatter(g, idx, in_shape),)

    return _node("maxpool2d", value, (x,), vjp)


def pool_scatter(g, idx: np.ndarray, in_shape) -> Tensor:
    """Route pooled values back to their recorded argmax positions (linear in g)."""
    g = as_tensor(g)
    in_shape = tuple(in_shape)
    return _node("pool_scatter", _pool_scatter_np(g.data, idx, in_shape), (g,),
                 lambda G, needs: (pool_gather(G, idx),), idx=idx, in_shape=in_shape)


def pool_gather(G, idx: np.ndarray) -> Tensor:
    """Read values at recorded argmax positions (adjoint of ``pool_scatter``)."""
    G = as_tensor(G)
    in_shape = G.shape
    value = np.take_along_axis(_pool_windows(G.data), idx[..., None], axis=-1)[..., 0]
    return _node("pool_gather", value, (G,), lambda g, needs: (pool_scatter(g, idx, in_shape),), idx=idx)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def log_softmax(logits) -> Tensor:
    """Row-wise log-softmax of a (B, C) tensor, stabilised by max subtraction."""
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ValueError(f"log_softmax: expected (B, C) logits, got shape {z.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def vjp(g, needs):
        return (sub(g, mul(exp(out_ref()), reduce_sum(g, axis=1, keepdims=True))),)

    out = _node("log_softmax", value, (z,), vjp)
    out_ref = weakref.ref(out)
    return out


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        bad = labels[(labels < 0) | (labels >= classes)][0]
        raise IndexError(f"label {int(bad)} out of range for {classes} classes")
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return out


def log_softmax_nll(logits, labels) -> Tensor:
    """Mean cross-entropy of (B, C) logits against integer labels."""
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ValueError(f"log_softmax_nll: expected (B, C) logits, got shape {z.shape}")
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise ValueError(f"log_softmax_nll: {labels.shape[0] if labels.ndim else 0} labels for batch of {z.shape[0]}")
    target = Tensor(one_hot(labels, z.shape[1]))
    return neg(reduce_mean(reduce_sum(mul(log_softmax(z), target), axis=1)))


# ---------------------------------------------------------------------------
# registry and gradients
# ---------------------------------------------------------------------------

PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "div": div,
    "square": square,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "leaky_relu": leaky_relu,
    "clip": clip,
    "reshape": reshape,
    "transpose": transpose,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "broadcast_to": broadcast_to,
    "sum_to": sum_to,
    "max": reduce_max,
    "matmul": matmul,
    "bias_add": bias_add,
    "conv2d": conv2d,
    "conv2d_wgrad": conv2d_wgrad,
    "conv_flip": conv_flip,
    "maxpool2d": maxpool2d,
    "pool_scatter": pool_scatter,
    "pool_gather": pool_gather,
    "log_softmax": log_softmax,
}


def primitive_forward(op: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply a primitive by name, e.g. ``primitive_forward("add", [a, b])``."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise KeyError(f"unknown primitive {op!r}; known: {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **attrs)


def recompute(node: Tensor) -> np.ndarray:
    """Re-run a node's primitive on its parents' values."""
    if node.op is None:
        return node.data
    with no_grad():
        return PRIMITIVES[node.op](*node.inputs, **node.attrs).data


def _topological(output: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a single-element ``output`` with respect to each tensor in ``wrt``.

    Tensors not connected to ``output`` get a zero gradient. With
    ``create_graph`` the returned tensors are graph nodes themselves.
    """
    if output.size != 1:
        raise ValueError(f"grad: output must be a scalar, got shape {output.shape}")
    if not output.requires_grad:
        raise GraphError("grad: output does not depend on any tensor that requires grad")
    wrt = list(wrt)
    order = _topological(output)

    wanted = {id(w) for w in wrt}
    relevant = set()
    for node in order:
        if id(node) in wanted or any(id(p) in relevant for p in node.inputs):
            relevant.add(id(node))

    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node.op is None:
                continue
            if id(node) not in wanted:
                del grads[id(node)]
            needs = tuple(p.requires_grad and id(p) in relevant for p in node.inputs)
            if not any(needs):
                continue
            for parent, pg, need in zip(node.inputs, node._vjp(g, needs), needs):
                if not need or pg is None:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)

    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(Tensor(np.zeros_like(w.data)) if g is None else g)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Largest elementwise relative error between ``grad`` and central differences."""
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0, requires_grad=True)
    (analytic,) = grad(f(x), [x])
    analytic = analytic.data
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    # f may call grad() internally, so it runs with grad mode untouched
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x0)).item()
        flat[i] = orig - h
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    err = np.abs(analytic - numeric) / denom
    if not np.all(np.isfinite(err)):
        return float("nan")
    return float(err.max())


def iter_graph(output: Tensor) -> Iterable[Tensor]:
    """All graph nodes reachable from ``output``, parents before children."""
    return iter(_topological(output))
