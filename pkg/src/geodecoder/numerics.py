"""A small dense tensor library with tape-based reverse-mode differentiation.

Operations record themselves on the active `Tape` (entered with ``with Tape()``)
whenever one of their inputs requires a gradient. Outside a tape nothing is
recorded, which is how inference runs. Arrays are numpy; tensors keep whatever
float dtype they were created with, so the same code runs in float32 for
training and float64 for gradient checking.
"""

from __future__ import annotations

import contextvars
import math
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)


def _raise_not_scalar(t: Tensor):
    raise ValueError(f"tensor of shape {t.shape} is not a scalar")


class _Node:
    __slots__ = ("out", "parents", "fn")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], fn: Callable):
        self.out = out
        self.parents = parents
        self.fn = fn


class Tape:
    """Ordered record of differentiable operations, replayed backwards by `backward`."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype if like is not None else None))


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append(_Node(out, tuple(parents), fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every leaf tensor that requires it."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(n.out) for n in tape.nodes}
    if id(loss) not in produced:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(pg, parent.data.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
            if key not in produced:
                leaves[key] = parent
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.data.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data / b.data, (a, b), lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    t = np.tanh(_GELU_C * (xd + 0.044715 * xd**3))
    y = 0.5 * xd * (1.0 + t)

    def fn(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result(y.astype(xd.dtype, copy=False), (x,), fn)


# -- shape -----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(x: Tensor, idx, axis: int) -> Tensor:
    """Gather positions `idx` (1-D integer array) along `axis`."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def fn(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(np.take(x.data, idx, axis=axis), (x,), fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup `table[ids]` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding index out of range [0, {table.shape[0]})")

    def fn(g):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), fn)


# -- reductions ------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from err

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _result(out, (a, b), fn)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else y + b


# -- normalization and softmax ---------------------------------------------


def softmax_masked(x: Tensor, mask=None, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis of x / temperature; masked-out entries come out exactly 0.

    `mask` is a boolean array broadcastable to x; True marks entries that take part.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = x.data / temperature
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.broadcast_to(mask, x.shape).any(axis=-1).all():
            raise ValueError("softmax row with every entry masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)) / temperature,)

    return _result(y.astype(x.dtype, copy=False), (x,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature size {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma.data + beta.data

    def fn(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(y.astype(xd.dtype, copy=False), (x, gamma, beta), fn)


# -- loss and regularization -----------------------------------------------


def cross_entropy(logits: Tensor, targets, ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under softmax(logits) over the last axis."""
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.max() >= v or targets.min() < 0):
        raise ValueError(f"target id outside [0, {v})")
    flat = logits.data.reshape(-1, v)
    t = targets.reshape(-1)
    valid = np.ones(t.shape, dtype=bool) if ignore_index is None else t != ignore_index
    n = int(valid.sum())
    if n == 0:
        raise ValueError("cross_entropy with no non-ignored targets")
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(t))
    nll = -logp[rows, t]
    loss = np.asarray(nll[valid].sum() / n, dtype=logits.dtype)

    def fn(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        p *= (valid / n)[:, None]
        return ((g * p).reshape(logits.shape).astype(logits.dtype, copy=False),)

    return _result(loss, (logits,), fn)


def dropout(x: Tensor, rate: float, key: Sequence[int]) -> Tensor:
    """Inverted dropout whose mask is a pure function of the integer `key`."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))
    keep = (gen.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- gradient checking -----------------------------------------------------

ParamSet = Union[Mapping[str, Tensor], Sequence[Tensor]]


def _named(params: ParamSet) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(str(i), p) for i, p in enumerate(params)]


def grad_check_per_tensor(
    f: Callable[[], Tensor],
    params: ParamSet,
    h: float = 1e-6,
    n_coords: int = 20,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Worst relative error between tape and central-difference gradients, per parameter tensor.

    `f` rebuilds the scalar loss from the current parameter values. Relative
    error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    named = _named(params)
    for _, p in named:
        if p.dtype != np.float64:
            raise ValueError("gradient checking requires float64 parameters")
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    rng = np.random.default_rng(seed)
    out = {}
    for name, p in named:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        picks = rng.choice(p.data.size, size=min(n_coords, p.data.size), replace=False)
        worst = 0.0
        for i in picks:
            idx = np.unravel_index(int(i), p.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = float(f().data)
            p.data[idx] = orig - h
            fm = float(f().data)
            p.data[idx] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic[idx])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        out[name] = worst
    return out


def grad_check(f: Callable[[], Tensor], params: ParamSet, h: float = 1e-6, n_coords: int = 20, seed: int = 0,
               floor: float = 1e-6) -> float:
    errs = grad_check_per_tensor(f, params, h, n_coords, seed, floor)
    return max(errs.values()) if errs else 0.0
