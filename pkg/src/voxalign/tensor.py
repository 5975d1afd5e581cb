"""Minimal dense-tensor engine with tape-based reverse-mode autodiff.

Tensors wrap row-major numpy arrays in a single global dtype (float64 for
testing and gradient checks, float32 allowed for training). Forward ops
record backward rules onto the active Tape; Tape.backward replays them in
reverse and accumulates gradients with += so shared parameters receive
summed contributions. A finite-difference checker (grad_check) verifies
any scalar-valued graph against central differences.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class ContractError(RuntimeError):
    """An op or the tape was used outside its contract."""


class NanError(FloatingPointError):
    """NaN produced by a forward op while NaN debugging is enabled."""


_DEFAULT_DTYPE = np.float64
_NAN_DEBUG = False


def set_default_dtype(dtype) -> None:
    """Set the global float mode (np.float64 or np.float32), never mixed in one graph."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported dtype {dtype}; use float64 or float32")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def set_nan_debug(enabled: bool) -> None:
    """Abort with the op name whenever a forward op produces NaN (cheap loss-spike insurance)."""
    global _NAN_DEBUG
    _NAN_DEBUG = bool(enabled)


class Tensor:
    """Dense n-dimensional array of reals. Immutable after creation except .grad."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # convenience operators (thin wrappers over the module-level ops)
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


class Tape:
    """Ordered record of forward ops; backward replays them once, in reverse.

    Use as a context manager around one forward pass. Only one tape may be
    live per thread; a second backward without a new forward is an error.
    """

    _local = threading.local()

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    @classmethod
    def active(cls) -> Optional["Tape"]:
        return getattr(cls._local, "tape", None)

    def __enter__(self) -> "Tape":
        if Tape.active() is not None:
            raise ContractError("a tape is already active on this thread")
        Tape._local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._local.tape = None
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((out, inputs, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into .grad of every requires_grad tensor."""
        if self._consumed:
            raise ContractError("tape already consumed; run a new forward pass before backward")
        self._consumed = True
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        # value = [array, owned]; stored arrays may alias a backward rule's
        # output (views of g_out, or one array returned for two inputs), so
        # a second contribution reallocates instead of mutating in place.
        grads: dict[int, list] = {id(loss): [np.ones_like(loss.data), True]}
        for out, inputs, backward in reversed(self._records):
            entry = grads.pop(id(out), None)
            if entry is None:
                continue
            g_out = entry[0]
            for inp, g_in in zip(inputs, backward(g_out)):
                if g_in is None:
                    continue
                key = id(inp)
                cur = grads.get(key)
                if cur is None:
                    grads[key] = [g_in, False]
                elif cur[1]:
                    cur[0] += g_in
                else:
                    grads[key] = [cur[0] + g_in, True]
        # leaves: any recorded input with requires_grad that is not itself an op output
        produced = {id(out) for out, _, _ in self._records}
        seen: set[int] = set()
        for _, inputs, _ in self._records:
            for inp in inputs:
                if inp.requires_grad and id(inp) not in produced and id(inp) not in seen:
                    seen.add(id(inp))
                    entry = grads.get(id(inp))
                    if entry is not None:
                        inp.accumulate_grad(np.asarray(entry[0]))
        if loss.requires_grad and id(loss) not in produced and id(loss) not in seen:
            loss.accumulate_grad(np.ones_like(loss.data))


def emit(op_name: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
         backward: Callable) -> Tensor:
    """Create an op output, run the NaN check, and record onto the active tape.

    `backward(g_out)` must return one gradient array (or None) per input,
    in order. Shared by the built-in ops and by custom ops defined in other
    modules (e.g. the rotary-embedding rotation).
    """
    out_data = np.asarray(out_data)  # 0-d numpy ops return scalars, not arrays
    if _NAN_DEBUG and np.isnan(out_data).any():
        raise NanError(f"NaN produced by op '{op_name}'")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = requires
    out.grad = None
    tape = Tape.active()
    if tape is not None and requires:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcastable(a_shape: tuple, b_shape: tuple, op: str) -> None:
    for x, y in zip(reversed(a_shape), reversed(b_shape)):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} are not broadcastable")


# ---------------------------------------------------------------------------
# elementwise / linear-algebra ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading batch dims broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank>=2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} vs {b.shape}")
    _check_broadcastable(a.shape[:-2], b.shape[:-2], "matmul")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) \
            if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) \
            if b.requires_grad else None
        return ga, gb

    return emit("matmul", out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return emit("add", out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.shape, b.shape, "sub")
    out_data = a.data - b.data

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return emit("sub", out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.shape, b.shape, "mul")
    out_data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return emit("mul", out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a.shape, b.shape, "div")
    out_data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) \
            if b.requires_grad else None
        return ga, gb

    return emit("div", out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return emit("exp", out_data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / out_data),)

    return emit("sqrt", out_data, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), computed as -log1p(exp(-x)) without overflow."""
    out_data = -np.logaddexp(0.0, -a.data)

    def backward(g):
        return (g * _sigmoid(-a.data),)

    return emit("logsigmoid", out_data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    # python-float constants keep float32 graphs in float32 (numpy scalar
    # constants would silently promote everything downstream to float64)
    inv_sqrt2 = 1.0 / float(np.sqrt(2.0))
    inv_sqrt_2pi = 1.0 / float(np.sqrt(2.0 * np.pi))
    cdf = 0.5 * (1.0 + erf(x * inv_sqrt2))
    out_data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * inv_sqrt_2pi
        return (g * (cdf + x * pdf),)

    return emit("gelu", out_data, (a,), backward)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last dim with max-subtraction; -inf entries map to exact 0."""
    if a.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs last dim >= 1, got {a.shape}")
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    # rows that are entirely -inf would yield NaN; the contract forbids them
    shifted = x - m
    e = np.exp(shifted, out=shifted)
    out_data = np.divide(e, np.sum(e, axis=-1, keepdims=True), out=e)

    def backward(g):
        dot = np.sum(g * out_data, axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return emit("softmax_lastdim", out_data, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dim to mean 0 / var 1, then apply the affine (gain, bias)."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be > 0, got {eps}")
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} must match last dim of {x.shape}")
    d = x.shape[-1]
    mean = np.mean(x.data, axis=-1, keepdims=True)
    var = np.var(x.data, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mean) * inv_std
    out_data = gain.data * xn + bias.data

    def backward(g):
        gn = g * gain.data
        gx = inv_std * (gn - np.mean(gn, axis=-1, keepdims=True)
                        - xn * np.mean(gn * xn, axis=-1, keepdims=True))
        sum_axes = tuple(range(g.ndim - 1))
        ggain = np.sum(g * xn, axis=sum_axes).reshape(d)
        gbias = np.sum(g, axis=sum_axes).reshape(d)
        return gx, ggain, gbias

    return emit("layer_norm", out_data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# shape / reduction ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    out_data = a.data.reshape(shape)
    in_shape = a.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return emit("reshape", out_data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return emit("transpose", out_data, (a,), backward)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, in_shape).copy(),)

    return emit("reduce_sum", np.asarray(out_data), (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    s = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, _as_tensor(1.0 / count))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from a [V, C] table; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for table of {table.shape[0]} rows")
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return emit("embedding", out_data, (table,), backward)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1-D or n-D tensors along a new leading axis."""
    out_data = np.stack([t.data for t in tensors], axis=0)
    sizes = [t.shape for t in tensors]

    def backward(g):
        return tuple(g[i].reshape(sizes[i]) for i in range(len(tensors)))

    return emit("concat_rows", out_data, tuple(tensors), backward)


def concat0(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the existing leading axis; backward splits the gradient."""
    if len(tensors) == 1:
        return tensors[0]
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    bounds = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.array_split(g, bounds, axis=0))

    return emit("concat0", out_data, tuple(tensors), backward)


def constant(data) -> Tensor:
    """A tensor that never requires grad (masks, sign matrices, precomputed patches)."""
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=False)


def param(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients of f() and central differences.

    f must rebuild the forward graph from `params` on every call and return a
    scalar Tensor. Relative error per entry is
    |analytic - fd| / max(1, |fd|). Run in float64 mode.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractError("grad_check requires f to return a scalar Tensor")
        tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def eval_scalar() -> float:
        return f().item()

    max_err = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_scalar()
            flat[i] = orig - h
            f_minus = eval_scalar()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(an_flat[i] - fd) / max(1.0, abs(fd))
            if err > max_err:
                max_err = err
    for p in params:
        p.zero_grad()
    return max_err
