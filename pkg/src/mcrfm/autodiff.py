"""Minimal reverse-mode autodiff over float64 numpy arrays.

The training stack only needs a fixed family of operations (linear maps,
layer norm, sigmoid/softplus/tanh/artanh, the ball exp/log/dist chain,
attention pooling, softmax cross-entropy), so a small dynamic tape is
enough: every op records a closure that scatters the incoming gradient
to its parents, and ``backward`` walks the tape in reverse topological
order.

Most functions in this module dispatch on their argument type: given a
:class:`Tensor` they extend the tape, given a plain array they evaluate
in numpy directly. Geometry and model code is written once against
these functions and runs in both modes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

# Guard against 0/0 when normalizing near the origin.
NORM_GUARD = 1e-15
# artanh arguments are clipped into the open interval (-1, 1).
ATANH_CLIP = 1e-15


class Tensor:
    """A node of the autodiff tape wrapping a float64 numpy array."""

    __slots__ = ("value", "grad", "_parents", "_backward_fn", "name")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[Array], None] | None = None,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.name = name

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def detach(self) -> "Tensor":
        """A constant copy cut off from the tape."""
        return Tensor(self.value.copy())

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every node reachable from this scalar."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar root")
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operators -----------------------------------------------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"


def parameter(value, name: str) -> Tensor:
    """A named trainable leaf."""
    return Tensor(np.array(value, dtype=np.float64), name=name)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def val(x) -> Array:
    """The underlying numpy value of a Tensor or array."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(x, y, fwd, bx, by):
    if not (isinstance(x, Tensor) or isinstance(y, Tensor)):
        return fwd(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    tx, ty = _wrap(x), _wrap(y)
    out = Tensor(fwd(tx.value, ty.value), parents=(tx, ty))

    def backward(g: Array) -> None:
        tx.accumulate(_unbroadcast(bx(g, tx.value, ty.value, out.value), tx.value.shape))
        ty.accumulate(_unbroadcast(by(g, tx.value, ty.value, out.value), ty.value.shape))

    out._backward_fn = backward
    return out


def _unary(x, fwd, bwd):
    if not isinstance(x, Tensor):
        return fwd(np.asarray(x, dtype=np.float64))
    out = Tensor(fwd(x.value), parents=(x,))

    def backward(g: Array) -> None:
        x.accumulate(bwd(g, x.value, out.value))

    out._backward_fn = backward
    return out


# -- arithmetic ---------------------------------------------------------


def add(x, y):
    return _binary(x, y, lambda a, b: a + b, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(x, y):
    return _binary(x, y, lambda a, b: a - b, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(x, y):
    return _binary(x, y, lambda a, b: a * b, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(x, y):
    return _binary(
        x,
        y,
        lambda a, b: a / b,
        lambda g, a, b, o: g / b,
        lambda g, a, b, o: -g * a / (b * b),
    )


def square(x):
    return _unary(x, lambda a: a * a, lambda g, a, o: 2.0 * a * g)


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, a, o: g / (2.0 * o))


def exp(x):
    return _unary(x, np.exp, lambda g, a, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, a, o: g / a)


def tanh(x):
    return _unary(x, np.tanh, lambda g, a, o: g * (1.0 - o * o))


def artanh(x):
    def fwd(a):
        return np.arctanh(np.clip(a, -1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP))

    def bwd(g, a, o):
        a = np.clip(a, -1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP)
        return g / (1.0 - a * a)

    return _unary(x, fwd, bwd)


def sigmoid(x):
    def fwd(a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out

    return _unary(x, fwd, lambda g, a, o: g * o * (1.0 - o))


def softplus(x):
    def fwd(a):
        return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))

    def bwd(g, a, o):
        return g * val(sigmoid(a))

    return _unary(x, fwd, bwd)


def silu(x):
    """Smooth gated activation x * sigmoid(x)."""
    return mul(x, sigmoid(x))


def matmul(x, y):
    if not (isinstance(x, Tensor) or isinstance(y, Tensor)):
        return np.asarray(x) @ np.asarray(y)
    tx, ty = _wrap(x), _wrap(y)
    if tx.value.ndim != 2 or ty.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = Tensor(tx.value @ ty.value, parents=(tx, ty))

    def backward(g: Array) -> None:
        tx.accumulate(g @ ty.value.T)
        ty.accumulate(tx.value.T @ g)

    out._backward_fn = backward
    return out


# -- reductions / shaping ------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    out = Tensor(np.sum(x.value, axis=axis, keepdims=keepdims), parents=(x,))

    def backward(g: Array) -> None:
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.value.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.value.shape).copy())

    out._backward_fn = backward
    return out


def tmean(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.mean(x, axis=axis, keepdims=keepdims)
    n = x.value.size if axis is None else x.value.shape[axis]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(n))


def amax(x):
    """Maximum over all entries; gradient routed to the first argmax."""
    if not isinstance(x, Tensor):
        return np.max(x)
    idx = np.unravel_index(int(np.argmax(x.value)), x.value.shape)
    out = Tensor(x.value[idx], parents=(x,))

    def backward(g: Array) -> None:
        buf = np.zeros_like(x.value)
        buf[idx] = g
        x.accumulate(buf)

    out._backward_fn = backward
    return out


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    out = Tensor(x.value.reshape(shape), parents=(x,))

    def backward(g: Array) -> None:
        x.accumulate(g.reshape(x.value.shape))

    out._backward_fn = backward
    return out


def concat(parts: Sequence, axis: int = -1):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)
    tparts = [_wrap(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in tparts], axis=axis), parents=tuple(tparts))
    sizes = [p.value.shape[axis] for p in tparts]

    def backward(g: Array) -> None:
        offset = 0
        for p, n in zip(tparts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + n)
            p.accumulate(g[tuple(sl)])
            offset += n

    out._backward_fn = backward
    return out


def getitem(x, key):
    if not isinstance(x, Tensor):
        return np.asarray(x)[key]
    out = Tensor(x.value[key], parents=(x,))

    def backward(g: Array) -> None:
        buf = np.zeros_like(x.value)
        np.add.at(buf, key, g)
        x.accumulate(buf)

    out._backward_fn = backward
    return out


def take_rows(x, idx):
    """Gather rows by integer index (duplicates allowed)."""
    idx = np.asarray(idx, dtype=np.intp)
    return getitem(x, idx) if isinstance(x, Tensor) else np.asarray(x)[idx]


def where(mask: Array, x, y):
    """Select per-entry; ``mask`` is a plain boolean array, not differentiated."""
    mask = np.asarray(mask, dtype=bool)
    if not (isinstance(x, Tensor) or isinstance(y, Tensor)):
        return np.where(mask, x, y)
    tx, ty = _wrap(x), _wrap(y)
    out = Tensor(np.where(mask, tx.value, ty.value), parents=(tx, ty))

    def backward(g: Array) -> None:
        tx.accumulate(_unbroadcast(np.where(mask, g, 0.0), tx.value.shape))
        ty.accumulate(_unbroadcast(np.where(mask, 0.0, g), ty.value.shape))

    out._backward_fn = backward
    return out


# -- norms / composite helpers -------------------------------------------


def l2norm(x, keepdims: bool = True):
    """Euclidean norm along the last axis with a safe zero subgradient."""
    if not isinstance(x, Tensor):
        return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1, keepdims=keepdims)
    value = np.linalg.norm(x.value, axis=-1, keepdims=keepdims)
    out = Tensor(value, parents=(x,))

    def backward(g: Array) -> None:
        denom = value if keepdims else np.expand_dims(value, -1)
        gg = g if keepdims else np.expand_dims(g, -1)
        x.accumulate(gg * x.value / np.maximum(denom, NORM_GUARD))

    out._backward_fn = backward
    return out


def sq_norm(x, keepdims: bool = True):
    return tsum(square(x), axis=-1, keepdims=keepdims)


def inner(x, y, keepdims: bool = True):
    return tsum(mul(x, y), axis=-1, keepdims=keepdims)


def softmax(x, axis: int = -1):
    """Numerically stable softmax (max shift treated as constant)."""
    shift = sub(x, np.max(val(x), axis=axis, keepdims=True))
    e = exp(shift)
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(x, axis: int = -1):
    shift = sub(x, np.max(val(x), axis=axis, keepdims=True))
    return sub(shift, log(tsum(exp(shift), axis=axis, keepdims=True)))


def layer_norm(x, gain=None, bias=None, eps: float = 1e-6):
    """Standardize along the last axis; identity on zero-width inputs."""
    if val(x).shape[-1] == 0:
        return x
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(square(centered), axis=-1, keepdims=True)
    out = div(centered, sqrt(add(var, eps)))
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


# -- gradient checking ----------------------------------------------------


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    denom_floor: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` rebuilds the scalar loss from the current parameter values on
    every call. The relative error uses max(|analytic|, |numeric|, floor)
    as denominator so finite-difference noise on near-zero gradients does
    not dominate.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(val(fn()))
            flat[i] = orig - h
            down = float(val(fn()))
            flat[i] = orig
            gn = (up - down) / (2.0 * h)
            err = abs(gflat[i] - gn) / max(abs(gflat[i]), abs(gn), denom_floor)
            worst = max(worst, err)
    return worst
