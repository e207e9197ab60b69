"""
Differentiable primitives used by the decoders.

Each function computes its forward value with numpy and, when the tape is
recording and some input requires grad, attaches the matching backward rule.
Never mutate an input's data, backward closures read it later.
"""
from typing import Sequence, Union

import numpy as np

from diffcore.errors import DimensionError
from diffcore.tensor import Tensor, grad_enabled

ArrayLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, parents=tuple(inputs), backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad, b.shape))

    return _result(out, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-grad, b.shape))

    return _result(out, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return _result(out, (a, b), backward)


def scale(x: ArrayLike, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def backward(grad):
        x.accumulate(grad * factor)

    return _result(x.data * factor, (x,), backward)


def where(condition: np.ndarray, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Select a where condition holds, b elsewhere (condition is a constant mask)"""
    a, b = as_tensor(a), as_tensor(b)
    condition = np.asarray(condition, dtype=bool)
    out = np.where(condition, a.data, b.data)

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(np.where(condition, grad, 0.0), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.where(condition, 0.0, grad), b.shape))

    return _result(out, (a, b), backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    out = np.empty_like(x.data)
    positive = x.data >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x.data[positive]))
    exp_x = np.exp(x.data[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)

    def backward(grad):
        x.accumulate(grad * out * (1.0 - out))

    return _result(out, (x,), backward)


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(grad):
        x.accumulate(grad * (1.0 - out * out))

    return _result(out, (x,), backward)


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def backward(grad):
        x.accumulate(grad / x.data)

    return _result(out, (x,), backward)


def softmax(z: ArrayLike) -> Tensor:
    """Softmax over the last axis, stabilized by max-subtraction"""
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise DimensionError(f"softmax: needs a non-empty last axis, got shape {z.shape}")
    shifted = np.exp(z.data - z.data.max(axis=-1, keepdims=True))
    out = shifted / shifted.sum(axis=-1, keepdims=True)

    def backward(grad):
        z.accumulate(out * (grad - (grad * out).sum(axis=-1, keepdims=True)))

    return _result(out, (z,), backward)


def log_softmax(z: ArrayLike) -> Tensor:
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise DimensionError(f"log_softmax: needs a non-empty last axis, got shape {z.shape}")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(grad):
        z.accumulate(grad - probs * grad.sum(axis=-1, keepdims=True))

    return _result(out, (z,), backward)


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------

def einsum(subscripts: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Two-operand einsum whose operand indices all survive in the other operand or the output"""
    a, b = as_tensor(a), as_tensor(b)
    inputs, output = subscripts.replace(" ", "").split("->")
    sub_a, sub_b = inputs.split(",")
    for own, other in ((sub_a, sub_b), (sub_b, sub_a)):
        if len(set(own)) != len(own) or any(c not in other and c not in output for c in own):
            raise DimensionError(f"einsum: unsupported subscripts {subscripts!r}")
    try:
        out = np.einsum(subscripts, a.data, b.data)
    except ValueError:
        raise DimensionError(f"einsum {subscripts!r}: shapes {a.shape} and {b.shape} do not agree")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(np.einsum(f"{output},{sub_b}->{sub_a}", grad, b.data))
        if b.requires_grad:
            b.accumulate(np.einsum(f"{output},{sub_a}->{sub_b}", grad, a.data))

    return _result(out, (a, b), backward)


def linear(x: ArrayLike, W: ArrayLike) -> Tensor:
    """Wx for a vector x, or x Wᵀ row-wise for a batch of shape (B, in)"""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {W.shape}")
    return einsum("i,oi->o" if x.ndim == 1 else "bi,oi->bo", x, W)


def affine(x: ArrayLike, W: ArrayLike, b: ArrayLike) -> Tensor:
    """Wx + b (row-wise for batches)"""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: input shape {x.shape} does not match weight shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"affine: bias shape {b.shape} does not match weight shape {W.shape}")
    return add(linear(x, W), b)


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} do not agree")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        for t, piece in zip(tensors, np.split(grad, bounds, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _result(out, tuple(tensors), backward)


def index(x: ArrayLike, key) -> Tensor:
    x = as_tensor(x)
    out = x.data[key]

    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) for p in parts)

    def backward(grad):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += grad
        else:
            np.add.at(full, key, grad)
        x.accumulate(full)

    return _result(np.array(out, copy=True), (x,), backward)


def reshape(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)

    def backward(grad):
        x.accumulate(grad.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def gather_rows(table: ArrayLike, ids) -> Tensor:
    """Embedding lookup: rows of table selected by integer ids"""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: ids outside [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, grad)
        table.accumulate(full)

    return _result(out, (table,), backward)


def pick(x: ArrayLike, ids) -> Tensor:
    """x[b, ids[b]] for every row b of a (B, V) tensor; x[ids] for a vector"""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim == 1:
        rows = ()
        key = (ids,)
    else:
        rows = np.arange(x.shape[0])
        key = (rows, ids)
    if np.any(ids < 0) or np.any(ids >= x.shape[-1]):
        raise DimensionError(f"pick: ids outside [0, {x.shape[-1]})")
    out = x.data[key]

    def backward(grad):
        full = np.zeros_like(x.data)
        np.add.at(full, key, grad)
        x.accumulate(full)

    return _result(out, (x,), backward)


def total(x: ArrayLike, axis=None) -> Tensor:
    """Sum over an axis (or everything)"""
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def backward(grad):
        if axis is None:
            x.accumulate(np.broadcast_to(grad, x.shape))
        else:
            x.accumulate(np.broadcast_to(np.expand_dims(grad, axis), x.shape))

    return _result(out, (x,), backward)


def mean(x: ArrayLike, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return scale(total(x, axis=axis), 1.0 / count)
