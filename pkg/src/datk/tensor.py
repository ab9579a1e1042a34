"""A small dense-array engine with reverse-mode differentiation.

Only the operations needed by the classifier, the amplitude generator and the
training losses are provided. Values are float64 numpy arrays; every op records
its parents and a closure mapping the output gradient to parent gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, NumericalError


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, parents=(), grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, grad_fn)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; the gradient passes only where the value was inside."""
    out = np.clip(a.data, lo, hi)
    mask = out == a.data
    return _make(out, (a,), lambda g: (g * mask,))


def maximum_const(a, floor: float) -> Tensor:
    mask = a.data >= floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------ reductions


def sum_(a, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), grad_fn)


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


# -------------------------------------------------------------------- shaping


def reshape(a, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx) -> Tensor:
    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), grad_fn)


def take(a, flat_index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with a (possibly repeating) integer index."""

    def grad_fn(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, flat_index, np.moveaxis(g, axis, 0))
        return (out,)

    return _make(np.take(a.data, flat_index, axis=axis), (a,), grad_fn)


def concat(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


# ----------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, weight, bias=None) -> Tensor:
    """x [N,in], weight [out,in], bias [out] -> [N,out]."""
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def grad_fn(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, grad_fn)


def conv3x3(x, weight, bias=None, stride=1) -> Tensor:
    """Direct 3x3 convolution, zero padding 1. weight [Cout,Cin,3,3]."""
    n, cin, h, w = x.shape
    cout = weight.shape[0]
    if weight.shape[1:] != (cin, 3, 3):
        raise ConfigurationError(f"conv3x3 weight {weight.shape} does not match input channels {cin}")
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    cols = kernels.im2col3x3(np.ascontiguousarray(x.data), stride)  # [N, P, Cin*9]
    wmat = weight.data.reshape(cout, cin * 9)
    out = cols @ wmat.T  # [N, P, Cout]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, cout, ho, wo))
    parents = [x, weight] + ([bias] if bias is not None else [])

    def grad_fn(g):
        gm = g.reshape(n, cout, ho * wo)  # [N, Cout, P]
        gx = None
        if x.requires_grad:
            dcols = np.ascontiguousarray(np.matmul(gm.transpose(0, 2, 1), wmat))
            gx = kernels.col2im3x3(dcols, cin, h, w, stride)
        gw = np.einsum("nop,npk->ok", gm, cols, optimize=True).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out, parents, grad_fn)


def global_avg_pool(x) -> Tensor:
    n, c, h, w = x.shape
    return _make(
        x.data.mean(axis=(2, 3)),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
    )


# ------------------------------------------------------------------- softmax


def log_softmax(z) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (z,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax(z) -> Tensor:
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return _make(p, (z,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


# ----------------------------------------------------------- parameters / grads


@dataclass
class ParameterSet:
    """Named trainable tensors plus non-trainable buffers and momentum state."""

    entries: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def add(self, name: str, value, trainable=True):
        if name in self.entries or name in self.buffers:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        if trainable:
            self.entries[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        else:
            self.buffers[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self.entries

    def names(self):
        return list(self.entries)

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.entries.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            {k: v.copy() for k, v in self.velocity.items()},
        )

    def state(self) -> dict:
        """Flat name -> array view of everything persisted in a checkpoint."""
        out = {k: v.data for k, v in self.entries.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        out.update({f"velocity:{k}": v for k, v in self.velocity.items()})
        return out

    def load_state(self, state: dict):
        for key, arr in state.items():
            arr = np.array(arr, dtype=np.float64)
            if key.startswith("buffer:"):
                target = self.buffers
                name = key[len("buffer:"):]
            elif key.startswith("velocity:"):
                self.velocity[key[len("velocity:"):]] = arr
                continue
            else:
                if key not in self.entries:
                    raise ConfigurationError(f"unexpected parameter {key!r} in state")
                if self.entries[key].shape != arr.shape:
                    raise ConfigurationError(f"shape mismatch for {key!r}: {arr.shape} vs {self.entries[key].shape}")
                self.entries[key] = Tensor(arr, requires_grad=True)
                continue
            if name not in target:
                raise ConfigurationError(f"unexpected buffer {name!r} in state")
            target[name] = arr


@dataclass
class GradientRecord:
    grads: dict
    input_grad: np.ndarray | None = None


def _sweep(loss: Tensor) -> dict:
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return grads


def _record(grads: dict, params: ParameterSet | None, inputs: Tensor | None) -> GradientRecord:
    named = {}
    if params is not None:
        for name, t in params.entries.items():
            if id(t) in grads:
                named[name] = np.asarray(grads[id(t)], dtype=np.float64).reshape(t.shape)
    input_grad = None
    if inputs is not None:
        input_grad = grads.get(id(inputs), np.zeros_like(inputs.data))
    return GradientRecord(named, input_grad)


def backward(loss: Tensor, params: ParameterSet | None = None, inputs: Tensor | None = None) -> GradientRecord:
    """Reverse sweep from a scalar ``loss``.

    Returns gradients for every entry of ``params`` reachable from the loss and,
    when ``inputs`` is given, the gradient with respect to that tensor.
    """
    return _record(_sweep(loss), params, inputs)


def backward_many(loss: Tensor, *param_sets: ParameterSet) -> list:
    """One reverse sweep, one GradientRecord per parameter set."""
    grads = _sweep(loss)
    return [_record(grads, p, None) for p in param_sets]


def finite_difference_gradient(fn: Callable[[np.ndarray], float], point, step: float = 1e-3, indices: Iterable[int] | None = None):
    """Central differences (fn(p + d e_i) - fn(p - d e_i)) / 2d per coordinate.

    ``indices`` restricts the probe to selected flat coordinates (others are
    left at zero), which keeps checks on large parameters affordable.
    """
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    p = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    flat = p.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn(p))
        flat[i] = orig - step
        fm = float(fn(p))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(p.shape)


def sgd_momentum_step(
    params: ParameterSet,
    grads: GradientRecord,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    direction: str = "descent",
    names: Iterable[str] | None = None,
) -> ParameterSet:
    """In-place SGD with momentum and L2 weight decay.

    Ascent is descent on the negated loss, so weight decay shrinks parameters
    in both directions. Returns ``params`` for chaining.
    """
    if lr <= 0:
        raise ContractError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ContractError("momentum must lie in [0, 1)")
    if direction not in ("descent", "ascent"):
        raise ContractError(f"unknown direction {direction!r}")
    sign = 1.0 if direction == "descent" else -1.0
    names = params.names() if names is None else list(names)
    missing = [n for n in names if n not in grads.grads]
    if missing:
        raise ContractError(f"missing gradient for parameters: {missing}")
    for name in names:
        p = params.entries[name]
        d = sign * grads.grads[name] + weight_decay * p.data
        v = params.velocity.get(name)
        v = d if v is None else momentum * v + d
        params.velocity[name] = v
        params.entries[name] = Tensor(p.data - lr * v, requires_grad=True)
    return params
