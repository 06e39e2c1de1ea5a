"""Reverse-mode automatic differentiation over numpy arrays.

Deliberately small engine: float64 everywhere, define-by-run graphs, and
only the operations the training objective needs -- dense matmul,
sparse-dense matmul (adjacency matrices enter as constants), elementwise
arithmetic, exp/log/sqrt/ELU, softmax-family reductions, and row gather.

Most helpers dispatch on their input: a ``Tensor`` builds a graph node,
a plain ndarray takes the numpy fast path. That keeps the forward
formulas single-sourced between training and deterministic evaluation.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from scipy.special import logsumexp as _sp_logsumexp


class GraphCycleError(RuntimeError):
    """The backward pass revisited a node under construction.

    Cannot happen for graphs built through this module's operations; it
    guards against graphs whose parent links were mutated afterwards.
    """


class UnsupportedOpError(TypeError):
    """An operation was applied to operands the engine cannot handle."""


def _coerce(value) -> np.ndarray:
    if isinstance(value, Tensor):
        raise UnsupportedOpError("cannot wrap a Tensor in another Tensor")
    try:
        return np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise UnsupportedOpError(
            f"cannot build a float64 tensor from {type(value)!r}") from exc


class Tensor:
    """A node in a dynamically built computation graph.

    Wraps a float64 ndarray. Every operation records a closure that maps
    the upstream gradient to gradients for its parents; ``backward``
    walks the graph in reverse topological order and accumulates them.
    Nodes that do not require gradients drop their parent links, so
    constant subtrees are never retained or traversed.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    # make `ndarray <op> Tensor` defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: Sequence["Tensor"] = (), backward: Callable | None = None):
        self.value = _coerce(value)
        self.grad: np.ndarray | None = None
        self.name = name
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        if self.requires_grad:
            self._parents = tuple(parents)
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic operators; plain numbers/arrays are wrapped as constants
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def parameter(value, name: str) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum the upstream gradient over axes that numpy broadcasting added."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, forward, back_a, back_b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value

    def backward(g):
        ga = _unbroadcast(back_a(g, av, bv), av.shape) if a.requires_grad else None
        gb = _unbroadcast(back_b(g, av, bv), bv.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(forward(av, bv), parents=(a, b), backward=backward)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g,
                   lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g,
                   lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y,
                   lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y))


def power(a, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise UnsupportedOpError("only constant exponents are supported")
    a = _wrap(a)
    av = a.value
    p = float(exponent)

    def backward(g):
        return (g * p * np.power(av, p - 1.0),)

    return Tensor(np.power(av, p), parents=(a,), backward=backward)


def _unary(x, forward, back) -> Tensor:
    x = _wrap(x)
    xv = x.value
    out = forward(xv)

    def backward(g):
        return (back(g, xv, out),)

    return Tensor(out, parents=(x,), backward=backward)


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    return _unary(x, np.sqrt, lambda g, xv, out: g * 0.5 / out)


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    return _unary(x, np.exp, lambda g, xv, out: g * out)


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    return _unary(x, np.log, lambda g, xv, out: g / xv)


def _elu_value(x: np.ndarray) -> np.ndarray:
    # clamp the unused branch so np.where never overflows on large positives
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu(x):
    """Exponential linear unit with unit slope, ELU(x) = x for x>=0 else e^x - 1."""
    if not isinstance(x, Tensor):
        return _elu_value(np.asarray(x, dtype=np.float64))
    return _unary(x, _elu_value,
                  lambda g, xv, out: g * np.where(xv >= 0.0, 1.0, out + 1.0))


def _gauss_std_value(x: np.ndarray) -> np.ndarray:
    # sqrt(ELU(x) + 1); the x<0 branch is written as exp(x/2) so neither the
    # value nor the derivative hits 0/0 when exp(x) underflows
    return np.where(x >= 0.0,
                    np.sqrt(np.maximum(x, 0.0) + 1.0),
                    np.exp(0.5 * np.minimum(x, 0.0)))


def gauss_std(x):
    """Standard deviation sqrt(ELU(x) + 1) of the positivity-transformed variance."""
    if not isinstance(x, Tensor):
        return _gauss_std_value(np.asarray(x, dtype=np.float64))
    return _unary(x, _gauss_std_value,
                  lambda g, xv, out: g * np.where(
                      xv >= 0.0,
                      0.5 / np.sqrt(np.maximum(xv, 0.0) + 1.0),
                      0.5 * np.exp(0.5 * np.minimum(xv, 0.0))))


def _softplus_value(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(x):
    """log(1 + e^x) in the overflow-safe form max(x,0) + log1p(e^-|x|)."""
    if not isinstance(x, Tensor):
        return _softplus_value(np.asarray(x, dtype=np.float64))
    return _unary(x, _softplus_value, lambda g, xv, out: g * expit(xv))


def asum(x, axis=None, keepdims: bool = False):
    """Sum reduction (numpy semantics for axis/keepdims)."""
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.value

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return Tensor(np.sum(xv, axis=axis, keepdims=keepdims), parents=(x,), backward=backward)


def amean(x, axis=None, keepdims: bool = False):
    """Mean reduction."""
    if not isinstance(x, Tensor):
        return np.mean(x, axis=axis, keepdims=keepdims)
    xv = x.value
    count = xv.size if axis is None else xv.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape) / count,)

    return Tensor(np.mean(xv, axis=axis, keepdims=keepdims), parents=(x,), backward=backward)


def transpose(x):
    if not isinstance(x, Tensor):
        return np.asarray(x).T
    return _unary(x, lambda v: v.T.copy(), lambda g, xv, out: g.T)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise UnsupportedOpError(
            f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    av, bv = a.value, b.value

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor(av @ bv, parents=(a, b), backward=backward)


def spmm(a, x):
    """Sparse-dense product ``a @ x`` with a constant scipy sparse matrix."""
    if not sp.issparse(a):
        raise UnsupportedOpError("spmm expects a scipy sparse left operand")
    if not isinstance(x, Tensor):
        return a @ np.asarray(x, dtype=np.float64)
    xv = x.value
    if xv.ndim != 2 or a.shape[1] != xv.shape[0]:
        raise UnsupportedOpError(
            f"spmm shape mismatch: {a.shape} @ {xv.shape}")
    at = a.T.tocsr()

    def backward(g):
        return (at @ g,)

    return Tensor(a @ xv, parents=(x,), backward=backward)


def logsumexp(x, axis: int = 1):
    """log(sum(exp(x))) along ``axis`` via the max-shifted stable form."""
    if not isinstance(x, Tensor):
        return _sp_logsumexp(x, axis=axis)
    xv = x.value
    out = _sp_logsumexp(xv, axis=axis)

    def backward(g):
        soft = np.exp(xv - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * soft,)

    return Tensor(out, parents=(x,), backward=backward)


def log_softmax(x, axis: int = 1):
    """Row-stable log softmax along ``axis``."""
    if not isinstance(x, Tensor):
        xv = np.asarray(x, dtype=np.float64)
        return xv - _sp_logsumexp(xv, axis=axis, keepdims=True)
    xv = x.value
    out = xv - _sp_logsumexp(xv, axis=axis, keepdims=True)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, parents=(x,), backward=backward)


def gather_rows(x, index):
    """Select rows ``x[index]``; the backward pass scatter-adds."""
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise UnsupportedOpError("gather_rows needs an integer index array")
    if not isinstance(x, Tensor):
        return np.asarray(x)[index]
    xv = x.value

    def backward(g):
        out = np.zeros_like(xv)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(xv[index], parents=(x,), backward=backward)


def l2_normalize(x, axis: int = 1, eps: float = 1e-12):
    """Scale rows to unit Euclidean norm; all-zero rows stay (near) zero."""
    sq = asum(mul(x, x) if isinstance(x, Tensor) else x * x, axis=axis, keepdims=True)
    return div(x, sqrt(add(sq, eps * eps))) if isinstance(x, Tensor) \
        else x / np.sqrt(sq + eps * eps)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        nid = id(node)
        if processed:
            state[nid] = 2
            order.append(node)
            continue
        mark = state.get(nid)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphCycleError("computation graph contains a cycle")
        state[nid] = 1
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and state.get(id(parent)) != 2:
                if state.get(id(parent)) == 1:
                    raise GraphCycleError("computation graph contains a cycle")
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable leaf from a scalar loss.

    Gradients accumulate into existing ``grad`` buffers on leaves, so call
    ``zero_grads`` between optimization steps.
    """
    if not isinstance(loss, Tensor):
        raise UnsupportedOpError("backward expects a Tensor")
    if loss.value.size != 1:
        raise UnsupportedOpError("backward expects a scalar loss")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: accumulate into the persistent grad buffer
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.copy() if pg.base is not None or pg is g else pg
            else:
                acc += pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_or_zero(p: Tensor) -> np.ndarray:
    return p.grad if p.grad is not None else np.zeros_like(p.value)
