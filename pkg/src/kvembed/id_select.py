"""Intrinsic dimension of layer representations and ID-driven layer choice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embed import apply_prompt
from .model import ModelConfig, Weights, forward_standard, tokenize
from .parallel import thread_map

DEFAULT_TRIM = 0.1


@dataclass
class TwoNNResult:
    dimension: float
    n_retained: int
    n_points: int
    duplicates: int
    trim_fraction: float


def nearest_two(points: np.ndarray, block: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Exact first/second nearest-neighbour Euclidean distances (brute force).

    Distances come from explicit coordinate differences rather than the
    Gram-matrix identity, so they are insensitive to a global translation.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    r1 = np.empty(n)
    r2 = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        two = np.partition(d, 1, axis=1)[:, :2]
        r1[start:stop] = two[:, 0]
        r2[start:stop] = two[:, 1]
    return r1, r2


def twonn(points, trim_fraction: float = DEFAULT_TRIM) -> TwoNNResult:
    """TwoNN estimate with full bookkeeping.

    With ``mu_i = r2_i / r1_i`` sorted ascending, the largest
    ``trim_fraction`` of ratios is treated as right-censored at the largest
    retained ratio, giving the maximum-likelihood estimate::

        d = N' / (sum_{i<=N'} log mu_(i) + (N - N') * log mu_(N'))

    which reduces to ``N / sum log mu_i`` when nothing is trimmed.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"point cloud must be 2-D, got shape {x.shape}")
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError("trim_fraction must lie in [0, 1)")
    unique = np.unique(x, axis=0)
    duplicates = x.shape[0] - unique.shape[0]
    n = unique.shape[0]
    if n < 3:
        raise ValueError(f"TwoNN needs at least 3 distinct points, got {n}")
    r1, r2 = nearest_two(unique)
    if np.any(r1 == 0):
        raise RuntimeError("zero nearest-neighbour distance after deduplication")
    log_mu = np.sort(np.log(r2 / r1))
    n_keep = max(int(n * (1.0 - trim_fraction)), 1)
    kept = log_mu[:n_keep]
    denom = kept.sum() + (n - n_keep) * kept[-1]
    if denom <= 0:
        raise ValueError("all neighbour ratios equal 1; dimension is unbounded")
    return TwoNNResult(float(n_keep / denom), n_keep, n, duplicates, trim_fraction)


def twonn_estimate(points, trim_fraction: float = DEFAULT_TRIM) -> float:
    return twonn(points, trim_fraction).dimension


@dataclass
class IDTrajectory:
    """ID per layer; ``values[0]`` is the embedding layer."""

    values: list[float]
    corpus_size: int
    details: list[TwoNNResult | None] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.values) - 1

    def to_dict(self) -> dict:
        layers = []
        for l, v in enumerate(self.values):
            d = self.details[l] if l < len(self.details) else None
            layers.append({
                "layer": l,
                "id": v,
                "n_retained": d.n_retained if d else None,
                "n_points": d.n_points if d else None,
                "duplicates": d.duplicates if d else None,
            })
        return {"values": list(self.values), "corpus_size": self.corpus_size, "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "IDTrajectory":
        values = d["values"] if "values" in d else d["trajectory"]
        return cls([float(v) for v in values], int(d.get("corpus_size", 0)))


def last_position_states(
    w: Weights, cfg: ModelConfig, corpus: Sequence[str], role: str = "context",
    prompt: bool = True, threads: int | None = None,
) -> list[np.ndarray]:
    """Per-layer ``(N, d_model)`` clouds of last-position hidden states."""

    def one(text):
        fed = apply_prompt(text, role) if prompt else text
        trace = forward_standard(w, cfg, tokenize(fed, cfg))
        return np.stack([h[-1] for h in trace.hidden])

    stacked = np.stack(thread_map(one, corpus, threads))  # (N, L+1, d)
    return [stacked[:, l, :] for l in range(stacked.shape[1])]


def trajectory_from_clouds(clouds: Sequence[np.ndarray], trim_fraction: float = DEFAULT_TRIM) -> IDTrajectory:
    values, details = [], []
    for cloud in clouds:
        if np.unique(cloud, axis=0).shape[0] == 1:
            # a single repeated point is 0-dimensional (e.g. layer 0 under a fixed prompt suffix)
            values.append(0.0)
            details.append(TwoNNResult(0.0, 1, 1, cloud.shape[0] - 1, trim_fraction))
            continue
        res = twonn(cloud, trim_fraction)
        values.append(res.dimension)
        details.append(res)
    return IDTrajectory(values, clouds[0].shape[0], details)


def id_trajectory(
    w: Weights,
    cfg: ModelConfig,
    corpus: Sequence[str],
    position: str = "last",
    role: str = "context",
    prompt: bool = True,
    trim_fraction: float = DEFAULT_TRIM,
    threads: int | None = None,
) -> IDTrajectory:
    """TwoNN ID of last-token states at every layer over a text corpus."""
    if position != "last":
        raise ValueError("only position='last' is supported")
    if len(corpus) < 3:
        raise ValueError(f"ID trajectory needs at least 3 texts, got {len(corpus)}")
    clouds = last_position_states(w, cfg, corpus, role, prompt, threads)
    return trajectory_from_clouds(clouds, trim_fraction)


@dataclass
class LayerSelection:
    layers: tuple[int, ...]
    strategy: str
    l_star: int | None = None
    minima: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "layers": list(self.layers),
            "strategy": self.strategy,
            "l_star": self.l_star,
            "minima": list(self.minima),
        }


def _block_values(traj) -> np.ndarray:
    values = traj.values if isinstance(traj, IDTrajectory) else traj
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2 or not np.all(np.isfinite(v)):
        raise ValueError("trajectory must be a finite sequence of length L+1 >= 2")
    return v


def window(l_star: int, n_layers: int) -> tuple[int, ...]:
    return tuple(range(l_star, min(n_layers, l_star + n_layers // 10) + 1))


def select_layers_window(traj) -> LayerSelection:
    """Contiguous window from the lowest-ID block layer (ties: lowest index)."""
    v = _block_values(traj)
    L = v.size - 1
    if L < 2:
        raise ValueError("window selection needs at least 2 block layers")
    l_star = int(np.argmin(v[1:])) + 1
    return LayerSelection(window(l_star, L), "window", l_star)


def local_minima(traj) -> list[int]:
    """Local minima over block layers ``1..L``.

    Interior layer ``l`` qualifies when ``v[l] < v[l-1]`` and ``v[l] <= v[l+1]``;
    layer 1 is only compared to its right neighbour and layer ``L`` to its left.
    """
    v = _block_values(traj)
    L = v.size - 1
    found = []
    for l in range(1, L + 1):
        left_ok = l == 1 or v[l] < v[l - 1]
        right_ok = l == L or v[l] <= v[l + 1]
        if left_ok and right_ok:
            found.append(l)
    return found


def select_layers_multimin(traj) -> LayerSelection:
    """Union of windows at every local minimum past the first ``floor(0.2 L)`` layers.

    Falls back to :func:`select_layers_window` when no minimum survives.
    """
    v = _block_values(traj)
    L = v.size - 1
    cutoff = (2 * L) // 10
    minima = [m for m in local_minima(v) if m > cutoff]
    if not minima:
        fallback = select_layers_window(v)
        return LayerSelection(fallback.layers, "window", fallback.l_star)
    layers = sorted({l for m in minima for l in window(m, L)})
    l_star = min(minima, key=lambda m: (v[m], m))
    return LayerSelection(tuple(layers), "multi-min", l_star, tuple(minima))


def select_layers(traj, strategy: str = "window") -> LayerSelection:
    if strategy in ("window", "auto:window"):
        return select_layers_window(traj)
    if strategy in ("multimin", "multi-min", "auto:multimin"):
        return select_layers_multimin(traj)
    raise ValueError(f"unknown selection strategy {strategy!r}")
