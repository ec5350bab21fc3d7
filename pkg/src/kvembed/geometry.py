"""Alignment and uniformity of unit-norm embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _vec(e) -> np.ndarray:
    return np.asarray(getattr(e, "vector", e), dtype=np.float64)


def _stack(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        x = np.asarray(points, dtype=np.float64)
    else:
        x = np.stack([_vec(p) for p in points]) if len(points) else np.empty((0, 0))
    if x.ndim != 2:
        raise ValueError(f"expected a list of vectors, got shape {x.shape}")
    return x


def cosine(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def alignment(pairs, alpha: float = 2.0) -> float:
    """Mean of ``||x - y||**alpha`` over positive pairs."""
    if len(pairs) == 0:
        raise ValueError("alignment needs at least one pair")
    x = _stack([p[0] for p in pairs])
    y = _stack([p[1] for p in pairs])
    if x.shape != y.shape:
        raise ValueError("pair members must share a dimension")
    dist = np.linalg.norm(x - y, axis=1)
    return float(np.mean(dist ** alpha))


def uniformity(points, t: float = 2.0) -> float:
    """``log`` of the mean Gaussian potential over ordered pairs ``i != j``."""
    x = _stack(points)
    n = x.shape[0]
    if n < 2:
        raise ValueError("uniformity needs at least 2 points")
    total = 0.0
    # fixed row order keeps the reduction reproducible
    for i in range(n):
        diff = x - x[i]
        sq = np.einsum("ij,ij->i", diff, diff)
        sq[i] = np.inf
        total += np.exp(-t * sq).sum()
    return float(np.log(total / (n * (n - 1))))


@dataclass
class MetricReport:
    alignment: float | None
    uniformity: float
    alpha: float
    t: float
    n_pairs: int
    n_points: int

    def to_dict(self, decimals: int | None = 4) -> dict:
        r = (lambda v: v) if decimals is None else (lambda v: None if v is None else round(v, decimals))
        return {
            "alignment": r(self.alignment),
            "uniformity": r(self.uniformity),
            "alpha": self.alpha,
            "t": self.t,
            "n_pairs": self.n_pairs,
            "n_points": self.n_points,
        }


def metric_report(points, pairs=None, alpha: float = 2.0, t: float = 2.0) -> MetricReport:
    align = alignment(pairs, alpha) if pairs else None
    return MetricReport(align, uniformity(points, t), alpha, t, len(pairs or ()), len(points))
