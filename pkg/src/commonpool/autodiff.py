"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Covers exactly the operations the game, clone networks and planner need:
broadcasting arithmetic, matmul (incl. batched), pointwise nonlinearities,
reductions, shape ops, gather, and fused softmax / cross-entropy. Graphs are
only built when an input requires gradients, so inference rollouts pay no
taping cost.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this (scalar or any-shape seed) tensor."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        if b.data.ndim == 1:
            _accum(a, _unbroadcast(np.outer(g, b.data) if a.data.ndim > 1 else g * b.data, a.data.shape))
            _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g if a.data.ndim > 1 else a.data * g, b.data.shape))
            return
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


def pow_(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent

    def backward(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _node(data, (a,), backward)


# -- pointwise -----------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _node(data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / data)

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _node(data, (a,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; subgradient routes to the smaller branch (ties to a)."""
    b = as_tensor(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _node(data, (a, b), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    b = as_tensor(b)
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _node(data, (a, b), backward)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select by a constant boolean mask (the mask itself carries no gradient)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(g * cond, a.data.shape))
        _accum(b, _unbroadcast(g * ~cond, b.data.shape))

    return _node(data, (a, b), backward)


def smooth_abs(a: Tensor, eps: float = 1e-8) -> Tensor:
    """sqrt(x^2 + eps): differentiable everywhere, used by the Gini penalty."""
    return sqrt(add(mul(a, a), Tensor(eps)))


# -- reductions ----------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else np.full_like(a.data, g))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / float(n)))


# -- shape ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = a.data.swapaxes(ax1, ax2)

    def backward(g):
        _accum(a, g.swapaxes(ax1, ax2))

    return _node(data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _node(data, tuple(tensors), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _node(data, tuple(tensors), backward)


def getitem(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accum(a, full)

    return _node(data, (a,), backward)


def take(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (backward scatter-adds)."""
    indices = np.asarray(indices)
    data = np.take(a.data, indices, axis=axis)
    ax = axis % a.data.ndim

    def backward(g):
        full = np.zeros_like(a.data)
        key = (slice(None),) * ax + (indices,)
        np.add.at(full, key, g)
        _accum(a, full)

    return _node(data, (a,), backward)


# -- fused softmax family -------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(data, (a,), backward)


def gradient_check(fn, tensors: list[Tensor], n_probes: int = 10,
                   step: float = 1e-5, rtol: float = 1e-4,
                   rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of scalar ``fn(*tensors)`` to central differences.

    Probes ``n_probes`` random coordinates of every input. Returns the worst
    relative error seen; raises AssertionError beyond ``rtol``. The comparison
    uses |fd - an| / max(1, |fd|, |an|) so tiny gradients are judged absolutely.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError("gradient_check needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        idxs = rng.choice(flat.size, size=min(n_probes, flat.size), replace=False)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + step
            hi = float(fn(*tensors).data)
            flat[i] = keep - step
            lo = float(fn(*tensors).data)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * step)
            err = abs(fd - analytic[i]) / max(1.0, abs(fd), abs(analytic[i]))
            worst = max(worst, err)
            if err > rtol:
                raise AssertionError(
                    f"gradient mismatch at coord {i}: analytic={analytic[i]:.8g} fd={fd:.8g} rel={err:.3g}")
    return worst


def cross_entropy(logits: Tensor, target_bins: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood of integer targets.

    Gradient is the textbook softmax(logits) - one_hot(target).
    """
    targets = np.asarray(target_bins, dtype=np.int64)
    n_bins = logits.data.shape[-1]
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= n_bins:
        raise ValueError(f"target bins must lie in [0, {n_bins})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.indices(targets.shape)
    data = -logp[(*rows, targets)]

    def backward(g):
        soft = np.exp(logp)
        onehot = np.zeros_like(soft)
        onehot[(*rows, targets)] = 1.0
        _accum(logits, (soft - onehot) * g[..., None])

    return _node(data, (logits,), backward)
