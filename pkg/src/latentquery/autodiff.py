"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array.  Operations build a graph of closures when
any input requires a gradient and gradient recording is enabled; calling
``backward()`` on a scalar walks that graph in reverse topological order.

Broadcasting is limited to the two cases the models need: a scalar operand,
and an operand whose shape is a suffix of the other's (e.g. a bias row added
to a ``(batch, length, dim)`` activation).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fiub":
            raise TypeError(f"unsupported dtype {arr.dtype}")
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_suffix(op: str, a: tuple, b: tuple) -> None:
    if a == b or len(b) == 0 or len(a) == 0:
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: shapes {a} and {b} do not conform")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _check_suffix("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data.astype(a.dtype, copy=False), (a, b), backward)


def sub(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _check_suffix("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _make(a.data - b.data.astype(a.dtype, copy=False), (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    _check_suffix("mul", a.shape, b.shape)
    ad, bd = a.data, b.data.astype(a.dtype, copy=False)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = _unbroadcast(g * bd, sa) if a.requires_grad else None
        gb = _unbroadcast(g * ad, sb) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward)


def mul_rows(x: Tensor, w) -> Tensor:
    """Scale each last-axis row of ``x`` by ``w`` (shape ``x.shape[:-1]``)."""
    w = _lift(w, x.dtype)
    if w.shape != x.shape[:-1]:
        raise ShapeError(f"mul_rows: weights {w.shape} vs rows of {x.shape}")
    xd, wd = x.data, w.data.astype(x.dtype, copy=False)

    def backward(g):
        gx = g * wd[..., None] if x.requires_grad else None
        gw = (g * xd).sum(axis=-1) if w.requires_grad else None
        return gx, gw

    return _make(xd * wd[..., None], (x, w), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _make(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _make(np.log(xd), (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return _make(np.clip(x.data, lo, hi), (x,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value`` (no gradient there)."""
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise ShapeError(f"masked_fill: mask shape {mask.shape} does not match {x.shape}") from None
    keep = ~full

    def backward(g):
        return (g * keep,)

    return _make(np.where(full, x.dtype.type(value), x.data), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if b.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(old),)

    return _make(y, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_lift(x) for x in xs]
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} do not conform on axis {axis}")
    sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([x.data for x in xs], axis=ax), xs, backward)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# neural network primitives
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y / temperature,)

    return _make(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    flat = x.data.reshape(-1, d)
    x_hat, inv = kernels.layernorm_forward(flat, eps)
    gd = gain.data
    out = (x_hat * gd + bias.data).reshape(x.shape)

    def backward(g):
        g2 = g.reshape(-1, d)
        gx = kernels.layernorm_backward(g2 * gd, x_hat, inv).reshape(x.shape) if x.requires_grad else None
        ggain = (g2 * x_hat).sum(axis=0) if gain.requires_grad else None
        gbias = g2.sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), backward)


def embedding(ids, table: Tensor) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _make(table.data[ids], (table,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Per-position negative log-likelihood, shape ``logits.shape[:-1]``.

    Masked positions contribute zero loss and zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    m = np.ones(targets.shape, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)
    nll = nll * m

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * (g * m)[..., None],)

    return _make(nll, (logits,), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``x.data`` (in place)."""
    out = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(fn().data)
            flat[i] = old - eps
            fm = float(fn().data)
            flat[i] = old
            out.reshape(-1)[i] = (fp - fm) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.asarray(a, dtype=np.float64) - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(num / den)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between analytic and numeric gradients."""
    for x in inputs:
        x.grad = None
        x.requires_grad = True
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        worst = max(worst, relative_error(analytic, numerical_grad(fn, x, eps)))
    return worst


def directional_gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                          rng: np.random.Generator, n_dirs: int = 3, eps: float = 1e-6) -> float:
    """Compare ``grad . v`` against a central difference along random ``v``.

    Used where coordinate-wise differences over every parameter are too slow.
    """
    for x in inputs:
        x.grad = None
        x.requires_grad = True
    fn().backward()
    grads = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(x.shape) for x in inputs]
        analytic = sum(float((g * v).sum()) for g, v in zip(grads, dirs))
        with no_grad():
            for x, v in zip(inputs, dirs):
                x.data += eps * v
            fp = float(fn().data)
            for x, v in zip(inputs, dirs):
                x.data -= 2 * eps * v
            fm = float(fn().data)
            for x, v in zip(inputs, dirs):
                x.data += eps * v
        numeric = (fp - fm) / (2 * eps)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12))
    return worst
