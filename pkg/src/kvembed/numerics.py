"""Dense float64 building blocks shared by the model and the analysis code.

Matrices and vectors are plain :class:`numpy.ndarray` objects of dtype
``float64``. The helpers here add the shape checks and numerically stable
formulations the rest of the package relies on.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

DEFAULT_ROPE_THETA = 10000.0

#: Bias value that switches the virtual prefix off (zero attention weight).
PREFIX_DISABLED = float("-inf")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises:
        ValueError: if ``a.cols != b.rows``; the message carries both shapes.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: a is {a.shape[0]}x{a.shape[1]}, "
            f"b is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def softmax_with_bias(scores, bias_at_index_0: float = 0.0) -> np.ndarray:
    """Softmax of ``scores`` after adding ``bias_at_index_0`` to ``scores[0]``.

    ``bias_at_index_0`` may be :data:`PREFIX_DISABLED` (``-inf``), which gives
    index 0 exactly zero weight; at least one other entry must then exist.
    """
    s = as_vector(scores, "scores").copy()
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    bias = float(bias_at_index_0)
    if math.isnan(bias) or bias == math.inf:
        raise ValueError(f"bias must be finite or -inf, got {bias}")
    if bias == -math.inf and s.size == 1:
        raise ValueError("cannot disable the only entry of a softmax")
    s[0] += bias
    s -= s.max()
    e = np.exp(s)
    return e / e.sum()


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax over the last axis; ``-inf`` entries get weight 0.

    Every row must contain at least one finite entry.
    """
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def rmsnorm(x, gain, eps: float) -> np.ndarray:
    """RMS normalisation ``x / sqrt(mean(x**2) + eps) * gain`` over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if x.shape[-1] != gain.shape[-1]:
        raise ValueError(f"rmsnorm dim mismatch: x has {x.shape[-1]}, gain has {gain.shape[-1]}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / rms * gain


def rope_frequencies(dim: int, theta_base: float = DEFAULT_ROPE_THETA) -> np.ndarray:
    """Angular frequency of each rotated pair ``(2j, 2j+1)``."""
    if dim % 2:
        raise ValueError(f"rotary dimension must be even, got {dim}")
    return theta_base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)


def rope_rotate(x, position: int, theta_base: float = DEFAULT_ROPE_THETA) -> np.ndarray:
    """Rotate consecutive pairs of ``x`` by ``position * theta_base**(-2j/dim)``."""
    x = as_vector(x, "x")
    if position < 0:
        raise ValueError("position must be non-negative")
    return apply_rope(x[None, :], np.array([position]), theta_base)[0]


@lru_cache(maxsize=64)
def _rope_table(positions: tuple, dim: int, theta_base: float):
    angles = np.asarray(positions, dtype=np.float64)[:, None] * rope_frequencies(dim, theta_base)[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def apply_rope(x: np.ndarray, positions, theta_base: float = DEFAULT_ROPE_THETA) -> np.ndarray:
    """Vectorised :func:`rope_rotate` for rows of ``x`` (``(..., n, dim)``)."""
    dim = x.shape[-1]
    if dim % 2:
        raise ValueError(f"rotary dimension must be even, got {dim}")
    cos, sin = _rope_table(tuple(int(p) for p in np.asarray(positions).ravel()), dim, float(theta_base))
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x, dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def l2_normalize(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ValueError("cannot normalise a zero vector")
    return x / norm


def silu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + np.tanh(0.5 * x))
