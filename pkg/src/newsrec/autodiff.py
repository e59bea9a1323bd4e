"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tensor wraps an ndarray and, when an operation involves at least one
tensor with ``requires_grad=True``, records itself on a dynamic tape
(parent links plus a vector-Jacobian closure). Calling ``backward()`` on a
scalar walks the tape in reverse topological order.

Gradients accumulate: ``grad`` fields are summed into, never overwritten,
so a fresh training step must call :func:`zero_grad` first. This matches
the usual loop of forward / backward / step / zero.
"""

from __future__ import annotations

import contextlib
import zlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DeterminismError(RuntimeError):
    """A function that must be deterministic returned two different values."""


_grad_enabled = True
_check_finite = False


def set_debug_checks(on: bool) -> None:
    """Enable NaN/Inf detection on every tensor created afterwards."""
    global _check_finite
    _check_finite = bool(on)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, reproducible child RNG derived from a single master seed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    )


def child_seed(seed: int, name: str) -> int:
    """Stable integer seed for components that take a seed rather than an RNG."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if _check_finite and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad ancestor of a scalar loss."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = _toposort(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __truediv__(self, other):
        return mul(self, powc(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
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
    return order


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced or stretched."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} are not broadcast-compatible"
        ) from None


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    """Matrix product of stacks of matrices; batch dimensions must match exactly."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _result(np.matmul(a.data, b.data), (a, b), vjp)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """W @ x for a 1-d x, returning a 1-d result."""
    out = matmul(w, reshape(x, (x.data.shape[-1], 1)))
    return reshape(out, (w.data.shape[0],))


def powc(a, c: float) -> Tensor:
    a = _coerce(a)
    c = float(c)
    data = a.data**c
    return _result(data, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def exp(a) -> Tensor:
    a = _coerce(a)
    data = np.exp(a.data)
    return _result(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = _coerce(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = _coerce(a)
    data = np.tanh(a.data)
    return _result(data, (a,), lambda g: (g * (1.0 - data * data),))


def relu(a) -> Tensor:
    a = _coerce(a)
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    data = np.exp(-np.logaddexp(0.0, -a.data))  # stable for large |x|
    return _result(data, (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    a = _coerce(a)
    data = np.logaddexp(0.0, a.data)
    sig = np.exp(-np.logaddexp(0.0, -a.data))
    return _result(data, (a,), lambda g: (g * sig,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _result(data, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; safe for inputs of magnitude 1e3+."""
    a = _coerce(a)
    if a.data.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), vjp)


def masked_softmax(a, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where ``mask`` is nonzero.

    Masked positions get weight 0. Slices whose support is empty come back
    all-zero rather than raising; callers that must reject empty support
    check their masks first.
    """
    a = _coerce(a)
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.data.shape)
    big = np.where(m > 0, a.data, -np.inf)
    mx = big.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)  # empty-support slices
    shifted = np.where(m > 0, a.data - mx, 0.0)  # masked entries may hold anything
    e = np.exp(shifted) * m
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom > 0, denom, 1.0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = _coerce(a)
    return _result(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_unbroadcast(g, a.data.shape),),
    )


def take(a, key) -> Tensor:
    """Basic indexing with gradient scatter-add back into the source."""
    a = _coerce(a)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, key, g)
        return (z,)

    return _result(a.data[key], (a,), vjp)


def embedding(table, idx) -> Tensor:
    """Row gather from a 2-d table by an integer index array."""
    table = _coerce(table)
    idx = np.asarray(idx)

    def vjp(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        return (z,)

    return _result(table.data[idx], (table,), vjp)


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; evaluation mode and p=0 return the input unchanged."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    a = _coerce(a)
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


def zero_grad(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


def collect_grads(params: dict) -> dict:
    """Snapshot accumulated gradients, zeros where nothing flowed."""
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.step = 0


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("Adam betas must lie in [0, 1)")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def finite_difference_check(
    f,
    params: dict,
    eps: float = 1e-5,
    samples_per_block: int = 32,
    seed: int = 0,
    grad_tweak=None,
) -> dict:
    """Worst relative error between analytic and central-difference gradients.

    ``f(params)`` must return a scalar Tensor and be deterministic (dropout
    off, fixed inputs); determinism is verified by evaluating twice. For each
    requires_grad block, up to ``samples_per_block`` coordinates are probed
    (all of them for small blocks). The relative error uses a floor of 1e-6
    in the denominator so exactly-zero gradients do not amplify rounding
    noise. ``grad_tweak(name, grad) -> grad`` is a verification hook that
    lets a caller corrupt the analytic gradient on purpose.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with no_grad():
        v1 = float(f(params).data)
        v2 = float(f(params).data)
    if v1 != v2:
        raise DeterminismError(f"f(params) returned {v1!r} then {v2!r}; disable randomness first")

    zero_grad(params)
    out = f(params)
    out.backward()

    rng = np.random.default_rng(seed)
    errs = {}
    for name in sorted(params):
        p = params[name]
        if not p.requires_grad:
            continue
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        if grad_tweak is not None:
            analytic = np.asarray(grad_tweak(name, analytic.reshape(p.data.shape))).reshape(-1)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= samples_per_block:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=samples_per_block, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = float(f(params).data)
            flat[i] = orig - eps
            with no_grad():
                f_minus = float(f(params).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), 1e-6)
            worst = max(worst, err)
        errs[name] = worst
    return errs
