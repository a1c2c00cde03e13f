"""Dense float32 kernels that every other module builds on.

All kernels take and return row-major float32 ndarrays and never mutate
their inputs unless an explicit ``out=`` buffer is passed. The reductions
that feed bit-reproducibility contracts (:func:`matmul`,
:func:`cosine_similarity`, :func:`cosine_matrix`) accumulate strictly left
to right in float32, so an independently written scalar loop produces the
exact same bits. That rules out BLAS, which is free to reassociate sums.

A lightweight FLOP counter can be armed with :func:`count_flops`; while it
is active every kernel tallies its cost under the accounting convention in
``docs/flops_accounting.md`` (multiply-adds count 2, elementwise ops count
1 per element). Similarity and sorting kernels are bookkeeping for the
reduction stage and deliberately tally nothing.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager

import numpy as np

F32 = np.float32

# Smallest positive normal float32; softplus clamps here so its output stays
# strictly positive even where exp() underflows.
_TINY = F32(np.finfo(np.float32).tiny)

# Above this threshold ln(1+e^x) and x agree to < 1e-9 relative error.
SOFTPLUS_CUTOFF = 20.0

# Vectors with a smaller norm are treated as directionless.
NORM_FLOOR = F32(1e-12)


class FlopCounter:
    """Running FLOP tally, grouped by kernel name."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: Counter[str] = Counter()

    def add(self, op: str, flops: int) -> None:
        self.total += flops
        self.by_op[op] += flops


_ACTIVE: FlopCounter | None = None


@contextmanager
def count_flops():
    """Arm a FLOP counter for the duration of the ``with`` block.

    Yields the :class:`FlopCounter`; nesting is rejected because a nested
    count would be double-booked.
    """
    global _ACTIVE
    if _ACTIVE is not None:
        raise RuntimeError("a FLOP counter is already active")
    counter = FlopCounter()
    _ACTIVE = counter
    try:
        yield counter
    finally:
        _ACTIVE = None


def as_f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def _ltr_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, _ = a.shape
    p = b.shape[1]
    acc = np.zeros((m, p), dtype=np.float32)
    if m == 0 or p == 0:
        return acc
    tmp = np.empty((m, p), dtype=np.float32)
    for i in range(a.shape[1]):
        np.multiply(a[:, i, None], b[i, :], out=tmp)
        np.add(acc, tmp, out=acc)
    return acc


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation order over K.

    The inner dimension is accumulated sequentially in float32, so the
    result is bit-identical to a naive scalar triple loop and reproducible
    across runs and platforms. Cost: 2*M*K*P.
    """
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if _ACTIVE is not None:
        _ACTIVE.add("matmul", 2 * a.shape[0] * a.shape[1] * b.shape[1])
    return _ltr_matmul(a, b)


def softplus(x) -> np.ndarray:
    """Elementwise ln(1+exp(x)) with an overflow-safe linear branch.

    For x > SOFTPLUS_CUTOFF the identity branch returns x directly. The
    result is clamped to the smallest positive normal float32 so it is
    strictly positive for every finite input, even where exp() underflows.
    """
    x = as_f32(x)
    if _ACTIVE is not None:
        _ACTIVE.add("softplus", x.size)
    cutoff = F32(SOFTPLUS_CUTOFF)
    out = np.log1p(np.exp(np.minimum(x, cutoff)))
    out = np.where(x > cutoff, x, out)
    return np.maximum(out, _TINY)


def silu(x) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    x = as_f32(x)
    if _ACTIVE is not None:
        _ACTIVE.add("silu", x.size)
    with np.errstate(over="ignore"):
        return x / (F32(1.0) + np.exp(-x))


def exp(x) -> np.ndarray:
    x = as_f32(x)
    if _ACTIVE is not None:
        _ACTIVE.add("exp", x.size)
    return np.exp(x)


def add(a, b, out: np.ndarray | None = None) -> np.ndarray:
    r = np.add(a, b, out=out)
    if _ACTIVE is not None:
        _ACTIVE.add("add", r.size)
    return r


def multiply(a, b, out: np.ndarray | None = None) -> np.ndarray:
    r = np.multiply(a, b, out=out)
    if _ACTIVE is not None:
        _ACTIVE.add("multiply", r.size)
    return r


def rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row dot product: (M, N) against (N,) -> (M,). Cost 2*M*N."""
    if _ACTIVE is not None:
        _ACTIVE.add("rowdot", 2 * a.shape[0] * a.shape[1])
    return (a * b).sum(axis=1, dtype=np.float32)


def mean_rows(x: np.ndarray) -> np.ndarray:
    """Column means of a (L, D) matrix. Cost L*D."""
    if _ACTIVE is not None:
        _ACTIVE.add("mean_rows", x.size)
    return x.mean(axis=0, dtype=np.float32)


def layernorm(x, scale, bias, eps: float = 1e-5) -> np.ndarray:
    """Row-wise layer normalization. Cost convention: 7 per element."""
    x = as_f32(x)
    if _ACTIVE is not None:
        _ACTIVE.add("layernorm", 7 * x.size)
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=np.float32)
    inv = F32(1.0) / np.sqrt(var + F32(eps))
    return centered * inv * as_f32(scale) + as_f32(bias)


def causal_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution along the sequence axis.

    out[t, e] = sum_j kernel[e, j] * x[t - (W-1) + j, e], zero-padded before
    the sequence start; tap j = W-1 multiplies the current token. Cost
    2*W*L*E.
    """
    x = as_f32(x)
    kernel = as_f32(kernel)
    if x.ndim != 2 or kernel.ndim != 2 or x.shape[1] != kernel.shape[0]:
        raise ValueError(
            f"causal_conv shape mismatch: x {x.shape} vs kernel {kernel.shape}"
        )
    length, channels = x.shape
    width = kernel.shape[1]
    if _ACTIVE is not None:
        _ACTIVE.add("causal_conv", 2 * width * length * channels)
    out = np.zeros((length, channels), dtype=np.float32)
    for j in range(width):
        back = width - 1 - j
        if back == 0:
            out += kernel[:, j] * x
        elif back < length:
            out[back:] += kernel[:, j] * x[: length - back]
    return out


def _ltr_dot(a: np.ndarray, b: np.ndarray) -> np.float32:
    # cumsum accumulates strictly left to right, matching matmul's K order.
    prod = a * b
    if prod.size == 0:
        return F32(0.0)
    return np.cumsum(prod, dtype=np.float32)[-1]


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0 if either norm < 1e-12.

    Accumulates left to right in float32, bit-identical to the matching
    entry of :func:`cosine_matrix`.
    """
    a = as_f32(a)
    b = as_f32(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(_ltr_dot(a, a))
    nb = np.sqrt(_ltr_dot(b, b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return 0.0
    dot = _ltr_dot(a, b)
    return float(F32(dot / F32(na * nb)))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity of the rows of a (M, K) and b (P, K).

    Entry [i, j] is bitwise equal to cosine_similarity(a[i], b[j]).
    """
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"cosine_matrix shape mismatch: {a.shape} vs {b.shape}")
    ones = np.ones((a.shape[1], 1), dtype=np.float32)
    na = np.sqrt(_ltr_matmul(a * a, ones)[:, 0])
    nb = np.sqrt(_ltr_matmul(b * b, ones)[:, 0])
    dots = _ltr_matmul(a, b.T)
    denom = na[:, None] * nb[None, :]
    ok = (na >= NORM_FLOOR)[:, None] & (nb >= NORM_FLOOR)[None, :]
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=ok)
    return out


def argsort_desc(values) -> np.ndarray:
    """Stable descending argsort; ties keep ascending original index."""
    v = as_f32(values)
    if v.ndim != 1:
        raise ValueError(f"argsort_desc expects a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("argsort_desc requires finite values")
    return np.argsort(-v, kind="stable")
