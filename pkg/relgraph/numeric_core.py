"""
Dense float64 tensor arithmetic, a seeded counter-based RNG, and the adjoint contract.

Tensors are plain numpy float64 arrays. Every differentiable op comes in two
forms: `op(...)` returns the value, `op_adjoint(...)` returns an Adjoint whose
pullback maps the output cotangent to one cotangent per input. Pullbacks are
linear in the cotangent and never touch the forward value.

Ops accept leading batch axes where that is natural (matmul, the elementwise
ops, row_softmax, channel_mean); weight operands that are broadcast over a
batch receive the batch-summed cotangent.
"""

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray

_MASK64 = (1 << 64) - 1


# ── Tensors ─────────────────────────────────────────────────────

def as_tensor(data, dims: Sequence[int] = None) -> Tensor:
    """Copy data into a finite, C-ordered float64 tensor"""
    t = np.array(data, dtype=np.float64, order="C")
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if int(np.prod(dims)) != t.size:
            raise ShapeError(f"dims {dims} hold {int(np.prod(dims))} values, data has {t.size}")
        t = t.reshape(dims)
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def frozen(t: Tensor) -> Tensor:
    """Mark a forward value read-only"""
    t.flags.writeable = False
    return t


# ── RNG ─────────────────────────────────────────────────────────

class Rng:
    """
    Counter-based Philox-4x64 generator keyed by (seed, stream).

    The 128-bit Philox key is seed in the low 64 bits and the stream index
    in the high 64 bits, so every stream index yields an independent,
    reproducible sequence.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = self.seed | (self.stream << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, stream: int) -> "Rng":
        """Independent generator for another stream of the same seed"""
        return Rng(self.seed, stream)

    def normal(self, shape, scale: float = 1.0) -> Tensor:
        return self._gen.standard_normal(shape) * scale

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> Tensor:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def dropout_mask(self, shape, p: float) -> Tensor:
        """Inverted-dropout mask: 0 with probability p, else 1/(1-p)"""
        if p <= 0.0:
            return np.ones(shape)
        keep = self._gen.uniform(0.0, 1.0, shape) >= p
        return keep / (1.0 - p)


# ── Adjoint contract ────────────────────────────────────────────

@dataclass(frozen=True)
class Adjoint:
    """Forward value plus its reverse-mode pullback"""

    value: Tensor
    pullback: Callable[[Tensor], Tuple[Tensor, ...]]

    def __call__(self, cotangent: Tensor) -> Tuple[Tensor, ...]:
        cotangent = np.asarray(cotangent, dtype=np.float64)
        if cotangent.shape != self.value.shape:
            raise ShapeError(f"cotangent shape {cotangent.shape} does not match value shape {self.value.shape}")
        return self.pullback(cotangent)


def unbroadcast(grad: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum a broadcast cotangent back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _dims(t: Tensor) -> str:
    return "×".join(str(d) for d in t.shape)


# ── Linear algebra ──────────────────────────────────────────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {_dims(a)} and {_dims(b)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: a is {_dims(a)}, b is {_dims(b)}")
    return np.matmul(a, b)


def matmul_adjoint(a: Tensor, b: Tensor) -> Adjoint:
    c = frozen(matmul(a, b))

    def pullback(dc: Tensor) -> Tuple[Tensor, Tensor]:
        da = np.matmul(dc, np.swapaxes(b, -1, -2))
        db = np.matmul(np.swapaxes(a, -1, -2), dc)
        return unbroadcast(da, a.shape), unbroadcast(db, b.shape)

    return Adjoint(c, pullback)


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x·w + bias with x of shape (B, K)"""
    if bias.shape != (w.shape[-1],):
        raise ShapeError(f"bias {_dims(bias)} does not match output width {w.shape[-1]}")
    return matmul(x, w) + bias


def linear_adjoint(x: Tensor, w: Tensor, bias: Tensor) -> Adjoint:
    y = frozen(linear(x, w, bias))

    def pullback(dy: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        dx = dy @ w.T
        dw = unbroadcast(np.swapaxes(x, -1, -2) @ dy, w.shape)
        db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dx, dw, db

    return Adjoint(y, pullback)


# ── Elementwise nonlinearities ──────────────────────────────────

def sigmoid(x: Tensor) -> Tensor:
    """Logistic function evaluated without overflow for large |x|"""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_adjoint(x: Tensor) -> Adjoint:
    y = frozen(sigmoid(x))
    return Adjoint(y, lambda dy: (dy * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_adjoint(x: Tensor) -> Adjoint:
    # gradient at exactly 0 is 0
    mask = x > 0
    return Adjoint(frozen(relu(x)), lambda dy: (dy * mask,))


def row_softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis with max subtraction"""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def row_softmax_adjoint(x: Tensor) -> Adjoint:
    y = frozen(row_softmax(x))

    def pullback(dy: Tensor) -> Tuple[Tensor]:
        return (y * (dy - np.sum(dy * y, axis=-1, keepdims=True)),)

    return Adjoint(y, pullback)


# ── Reductions and structural lifts ─────────────────────────────

def channel_mean(n: Tensor) -> Tensor:
    """Mean over the last (channel) axis: (..., N, C) -> (..., N)"""
    if n.shape[-1] < 1:
        raise ShapeError("channel_mean needs at least one channel")
    return n.mean(axis=-1)


def channel_mean_adjoint(n: Tensor) -> Adjoint:
    channels = n.shape[-1]
    z = frozen(channel_mean(n))
    return Adjoint(z, lambda dz: (np.repeat(dz[..., None] / channels, channels, axis=-1),))


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack b's rows under a's rows (axis -2)"""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"concat_rows needs matching columns: a is {_dims(a)}, b is {_dims(b)}")
    return np.concatenate([a, b], axis=-2)


def concat_rows_adjoint(a: Tensor, b: Tensor) -> Adjoint:
    split = a.shape[-2]
    y = frozen(concat_rows(a, b))
    return Adjoint(y, lambda dy: (dy[..., :split, :].copy(), dy[..., split:, :].copy()))


def split_rows(x: Tensor, first: int) -> Tuple[Tensor, Tensor]:
    """Inverse of concat_rows"""
    return x[..., :first, :].copy(), x[..., first:, :].copy()


def reshape(x: Tensor, dims: Sequence[int]) -> Tensor:
    dims = tuple(int(d) for d in dims)
    if int(np.prod(dims)) != x.size:
        raise ShapeError(f"cannot reshape {_dims(x)} into {dims}")
    return x.reshape(dims)


def reshape_adjoint(x: Tensor, dims: Sequence[int]) -> Adjoint:
    shape = x.shape
    y = frozen(reshape(x, dims).copy())
    return Adjoint(y, lambda dy: (dy.reshape(shape),))


def scale(x: Tensor, alpha: Union[float, Tensor]) -> Tensor:
    """Multiply by a constant scalar or same-shape constant tensor"""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim and alpha.shape != x.shape:
        raise ShapeError(f"scale factor {_dims(alpha)} does not match {_dims(x)}")
    return x * alpha


def scale_adjoint(x: Tensor, alpha: Union[float, Tensor]) -> Adjoint:
    y = frozen(scale(x, alpha))
    return Adjoint(y, lambda dy: (dy * alpha,))


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add needs equal shapes: {_dims(x)} vs {_dims(y)}")
    return x + y


def add_adjoint(x: Tensor, y: Tensor) -> Adjoint:
    return Adjoint(frozen(add(x, y)), lambda dz: (dz, dz))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Row i of x times s_i: (..., N, D) by (..., N)"""
    if x.shape[:-1] != s.shape:
        raise ShapeError(f"row scales {_dims(s)} do not match rows of {_dims(x)}")
    return x * s[..., None]


def scale_rows_adjoint(x: Tensor, s: Tensor) -> Adjoint:
    y = frozen(scale_rows(x, s))

    def pullback(dy: Tensor) -> Tuple[Tensor, Tensor]:
        return dy * s[..., None], np.sum(dy * x, axis=-1)

    return Adjoint(y, pullback)
