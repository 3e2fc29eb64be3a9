"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus, when it was produced by an operation on
tensors that require gradients, a record of its parents and a local
vector-Jacobian rule.  backward() walks the recorded graph in reverse
topological order, accumulates adjoints, and deposits gradients on leaf
tensors created with requires_grad=True.  The record is released as it is
consumed; reusing a consumed graph raises instead of silently dropping
gradient flow.

Everything is double precision.  Shapes follow numpy row-major layout with
trailing-dimension broadcasting; broadcast gradients are summed back to the
operand shape.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "tensor", "custom_op", "backward", "zero_grad",
    "add", "sub", "mul", "div", "neg", "reciprocal",
    "exp", "expm1", "log", "sqrt", "absolute", "sin", "cos", "arccos",
    "sigmoid", "silu", "softplus", "elementwise",
    "where", "maximum", "minimum", "clip",
    "matmul", "tsum", "tmean", "reshape", "transpose", "flip", "concat",
    "softmax",
    "conv1d_bank", "causal_conv1d", "conv2d", "maxpool1d", "maxpool2d",
    "finite_difference_check",
]

_FREED = object()  # sentinel: this node's record was consumed by backward()


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    # ---- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant view of the same values, cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, idx):
        return _getitem(self, idx)

    # ---- method conveniences --------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(data, parents, vjp) -> Tensor:
    """Build an op node; vjp(grad_out) returns one array or None per parent.

    The graph is only recorded when some parent requires gradients, so
    constant subexpressions fold away for free.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---- graph traversal ----------------------------------------------------

def _topo_order(root: Tensor):
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
        for p in node._parents:
            if callable(p._vjp):
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; populates .grad on leaves.

    The recorded graph is released as it is consumed, so a second backward
    through shared intermediate nodes raises ContractError rather than
    producing silently wrong gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._vjp is _FREED:
        raise ContractError("backward: this graph was already consumed")
    if not callable(loss._vjp):
        if loss.requires_grad and loss._vjp is None:
            loss.grad = _accumulate(loss.grad, np.ones_like(loss.data))
        return

    grads = {id(loss): np.ones_like(loss.data)}
    order = _topo_order(loss)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            if callable(parent._vjp):
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
            elif parent._vjp is _FREED:
                raise ContractError(
                    "backward: reached a node whose record was already consumed")
            elif parent.requires_grad:
                parent.grad = _accumulate(parent.grad, pg)
        node._parents = ()
        node._vjp = _FREED


def _accumulate(current, update):
    if current is None:
        return np.array(update, dtype=np.float64)
    current += update
    return current


def zero_grad(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


# ---- elementwise arithmetic ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    return custom_op(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    return custom_op(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return custom_op(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, a.shape),
                                _unbroadcast(g * ad, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return custom_op(out, (a, b),
                     lambda g: (_unbroadcast(g / bd, a.shape),
                                _unbroadcast(-g * out / bd, b.shape)))


def neg(a: Tensor) -> Tensor:
    return custom_op(-a.data, (a,), lambda g: (-g,))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return custom_op(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,))


def expm1(a: Tensor) -> Tensor:
    out = np.expm1(a.data)
    ad = a.data
    return custom_op(out, (a,), lambda g: (g * np.exp(ad),))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return custom_op(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def arccos(a: Tensor) -> Tensor:
    ad = a.data
    return custom_op(np.arccos(ad), (a,),
                     lambda g: (-g / np.sqrt(1.0 - ad * ad),))


def _sigmoid_data(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_data(a.data)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_data(a.data)
    out = a.data * s
    return custom_op(out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    # max(x, 0) + log1p(exp(-|x|)) is exact on both tails and never overflows
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    return custom_op(out, (a,), lambda g: (g * _sigmoid_data(ad),))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "exp": exp, "log": log,
    "sigmoid": sigmoid, "silu": silu, "softplus": softplus,
    "negate": neg, "reciprocal": reciprocal,
}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by op name; binary kinds require b, unary kinds forbid it."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ContractError(f"elementwise {kind!r} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"elementwise {kind!r} takes one operand")
    return fn(a)


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Select a where cond else b; cond is a constant boolean mask."""
    c = cond.data.astype(bool) if isinstance(cond, Tensor) else np.asarray(cond, bool)
    a, b = _wrap(a), _wrap(b)
    out = np.where(c, a.data, b.data)
    return custom_op(out, (a, b),
                     lambda g: (_unbroadcast(np.where(c, g, 0.0), a.shape),
                                _unbroadcast(np.where(c, 0.0, g), b.shape)))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data >= b.data
    return where(take_a, a, b)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data
    return where(take_a, a, b)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    return minimum(maximum(a, Tensor(lo)), Tensor(hi))


# ---- linear algebra and reductions ---------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb

    return custom_op(out, (a, b), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return custom_op(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod(
        [a.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return custom_op(a.data.reshape(shape), (a,),
                     lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return custom_op(np.transpose(a.data, axes), (a,),
                     lambda g: (np.transpose(g, inverse),))


def flip(a: Tensor, axis: int) -> Tensor:
    return custom_op(np.flip(a.data, axis=axis), (a,),
                     lambda g: (np.flip(g, axis=axis),))


def concat(parts, axis: int) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return custom_op(data, tuple(parts), vjp)


def _getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] += g
        return (full,)

    return custom_op(np.array(out), (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax; the shift is a constant, as softmax is
    invariant to it."""
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


# ---- convolution and pooling ----------------------------------------------

def conv1d_bank(x: Tensor, kernels: Tensor) -> Tensor:
    """Correlate (B, S) signals with a bank of (F, K) kernels, K odd,
    zero-padded so the output is (B, F, S).  FFT-based; gradients flow to
    both operands.
    """
    x, kernels = _wrap(x), _wrap(kernels)
    if x.ndim != 2 or kernels.ndim != 2:
        raise DimensionError(
            f"conv1d_bank needs (B, S) and (F, K), got {x.shape} and {kernels.shape}")
    B, S = x.shape
    F, K = kernels.shape
    if K % 2 != 1:
        raise ContractError(f"kernel length must be odd, got {K}")
    if S < K:
        raise DimensionError(f"signal length {S} shorter than kernel {K}")
    p = K // 2
    n = S + 2 * p
    xpad = np.pad(x.data, ((0, 0), (p, p)))
    xf = np.fft.rfft(xpad, axis=1)
    kf = np.fft.rfft(kernels.data, n=n, axis=1)
    out = np.fft.irfft(xf[:, None, :] * np.conj(kf)[None, :, :], n=n, axis=2)[:, :, :S]

    def vjp(g):
        gf = np.fft.rfft(g, n=n, axis=2)
        gk = np.fft.irfft(np.einsum("bn,bfn->fn", xf, np.conj(gf)), n=n, axis=1)[:, :K]
        gx = None
        if x.requires_grad:
            gxpad = np.fft.irfft(np.einsum("bfn,fn->bn", gf, kf), n=n, axis=1)
            gx = gxpad[:, p:p + S]
        return gx, gk

    return custom_op(np.ascontiguousarray(out), (x, kernels), vjp)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise causal convolution over (B, L, E) with per-channel taps
    (E, k); position l sees inputs l-k+1 .. l only.
    """
    x, weight = _wrap(x), _wrap(weight)
    B, L, E = x.shape
    Ew, k = weight.shape
    if Ew != E:
        raise DimensionError(f"channel mismatch: input {x.shape}, taps {weight.shape}")
    xpad = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.zeros((B, L, E), dtype=np.float64)
    for j in range(k):
        out += xpad[:, j:j + L, :] * weight.data[:, j]

    def vjp(g):
        gw = np.empty((E, k), dtype=np.float64)
        gxpad = np.zeros_like(xpad)
        for j in range(k):
            gw[:, j] = np.einsum("ble,ble->e", g, xpad[:, j:j + L, :])
            gxpad[:, j:j + L, :] += g * weight.data[:, j]
        return gxpad[:, k - 1:, :], gw

    y = custom_op(out, (x, weight), vjp)
    if bias is not None:
        y = add(y, bias)
    return y


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 2-D convolution, (B, C, H, W) x (O, C, kh, kw).

    Implemented as a sum over kernel offsets of channel-mixing matmuls, so
    no im2col buffer is ever materialized.
    """
    x, weight = _wrap(x), _wrap(weight)
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise DimensionError(f"channel mismatch: input {x.shape}, weight {weight.shape}")
    if kh % 2 != 1 or kw % 2 != 1:
        raise ContractError(f"conv2d kernel extents must be odd, got {(kh, kw)}")
    ph, pw = kh // 2, kw // 2
    xpad = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    acc = np.zeros((O, B, H, W), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(weight.data[:, :, i, j],
                                xpad[:, :, i:i + H, j:j + W], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3)

    def vjp(g):
        gw = np.empty_like(weight.data)
        gxpad = np.zeros_like(xpad)
        for i in range(kh):
            for j in range(kw):
                patch = xpad[:, :, i:i + H, j:j + W]
                gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, patch)
                gxpad[:, :, i:i + H, j:j + W] += np.tensordot(
                    g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        return gxpad[:, :, ph:ph + H, pw:pw + W], gw

    y = custom_op(np.ascontiguousarray(out), (x, weight), vjp)
    if bias is not None:
        y = add(y, reshape(bias, (1, O, 1, 1)))
    return y


def maxpool2d(x: Tensor, pool) -> Tensor:
    """Non-overlapping max pooling over the trailing two axes; remainder
    rows / columns that do not fill a window are dropped.  Gradient routes
    to a single argmax winner per window.
    """
    pf, pt = pool
    B, C, H, W = x.shape
    Ht, Wt = H // pf, W // pt
    if Ht < 1 or Wt < 1:
        raise DimensionError(f"pool {pool} larger than input plane {(H, W)}")
    v = x.data[:, :, :Ht * pf, :Wt * pt]
    v6 = v.reshape(B, C, Ht, pf, Wt, pt).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(v6).reshape(B, C, Ht, Wt, pf * pt)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        z = np.zeros((B, C, Ht, Wt, pf * pt), dtype=np.float64)
        np.put_along_axis(z, idx[..., None], g[..., None], axis=-1)
        z = z.reshape(B, C, Ht, Wt, pf, pt).transpose(0, 1, 2, 4, 3, 5)
        full = np.zeros(x.shape, dtype=np.float64)
        full[:, :, :Ht * pf, :Wt * pt] = z.reshape(B, C, Ht * pf, Wt * pt)
        return (full,)

    return custom_op(out, (x,), vjp)


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling over the last axis of (B, F, S)."""
    B, F, S = x.shape
    T = S // pool
    if T < 1:
        raise DimensionError(f"pool {pool} larger than signal length {S}")
    v = x.data[:, :, :T * pool].reshape(B, F, T, pool)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        z = np.zeros((B, F, T, pool), dtype=np.float64)
        np.put_along_axis(z, idx[..., None], g[..., None], axis=-1)
        full = np.zeros(x.shape, dtype=np.float64)
        full[:, :, :T * pool] = z.reshape(B, F, T * pool)
        return (full,)

    return custom_op(out, (x,), vjp)


# ---- gradient verification -------------------------------------------------

def finite_difference_check(f, params, step: float = 1e-5):
    """Compare analytic gradients of f() against central differences.

    f rebuilds its graph from the current parameter values on every call and
    returns a scalar Tensor.  params maps names to leaf tensors; every
    element of every parameter is probed.  Returns {name: relative error},
    measured per parameter as ||analytic - fd||_inf / ||gradient||_inf, so
    that difference-quotient roundoff on near-zero elements is weighed
    against the parameter's gradient scale instead of being amplified into
    spurious failures.
    """
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    zero_grad(params)
    loss = f()
    if loss.data.size != 1:
        raise ContractError(f"finite_difference_check needs a scalar, got {loss.shape}")
    backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} received no gradient")
        analytic[name] = p.grad.copy()

    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = f().item()
            flat[i] = saved - step
            lo = f().item()
            flat[i] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(
                    f"non-finite loss while probing {name!r} element {i}")
            fd[i] = (hi - lo) / (2.0 * step)
        a = analytic[name].reshape(-1)
        if flat.size == 0:
            errors[name] = 0.0
            continue
        denom = max(np.max(np.abs(a)), np.max(np.abs(fd)), 1e-6)
        errors[name] = float(np.max(np.abs(a - fd)) / denom)
    return errors
