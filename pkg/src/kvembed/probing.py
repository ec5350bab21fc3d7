"""Linear probes on frozen KV / hidden states.

The probe is an L2-regularised multinomial logistic regression trained by
full-batch gradient descent. Each iteration tries a Barzilai-Borwein step and
backtracks (Armijo) until the loss decreases, so the recorded loss history
is non-increasing. The regularisation strength is picked by k-fold
cross-validated accuracy on the training split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ModelConfig, Weights, forward_standard, tokenize
from .parallel import thread_map

DEFAULT_L2_GRID = tuple(float(x) for x in np.logspace(-4, 1, 6))
POSITIONS = ("first", "middle", "last")


@dataclass
class ProbeDataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.val_idx = np.asarray(self.val_idx, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree on N"
            )
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("train and validation splits overlap")
        if np.unique(self.labels).size < 2:
            raise ValueError("a probe needs at least 2 classes")

    @classmethod
    def split(cls, features, labels, n_train: int, n_val: int | None = None, seed: int = 42):
        """Random disjoint train/validation split of the first ``n_train + n_val`` rows."""
        n = len(labels)
        n_val = n - n_train if n_val is None else n_val
        if n_train + n_val > n:
            raise ValueError(f"split sizes {n_train}+{n_val} exceed {n} examples")
        perm = np.random.default_rng(seed).permutation(n)
        return cls(features, labels, perm[:n_train], perm[n_train:n_train + n_val])


@dataclass
class ProbeModel:
    weight: np.ndarray  # (classes, F)
    bias: np.ndarray  # (classes,)
    l2: float
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    grad_norm: float = math.nan

    def decision_function(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weight.T + self.bias

    def predict(self, x) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(x), axis=1)]

    def accuracy(self, x, y) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray, n_classes: int, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (bias unpenalised).

    ``params`` is the flattened ``[W (classes x F), b (classes)]``; ``y`` holds
    class indices or a precomputed one-hot matrix.
    """
    n, f = x.shape
    w = params[: n_classes * f].reshape(n_classes, f)
    b = params[n_classes * f:]
    onehot = y if y.ndim == 2 else np.eye(n_classes)[y]
    logp = _log_softmax(x @ w.T + b)
    loss = -np.sum(logp * onehot) / n + 0.5 * l2 * np.sum(w * w)
    r = (np.exp(logp) - onehot) / n
    grad = np.empty_like(params)
    grad[: n_classes * f] = (r.T @ x + l2 * w).ravel()
    grad[n_classes * f:] = r.sum(axis=0)
    return float(loss), grad


def fit_logreg(
    x, y, l2: float, max_iter: int = 10_000, tol: float = 1e-6, standardize: bool = True,
    init: ProbeModel | None = None,
) -> ProbeModel:
    """Fit one probe at a fixed ``l2``; stops when ``||grad|| < tol``.

    ``init`` warm-starts from another model fit on the same data.
    """
    x = np.asarray(x, dtype=np.float64)
    classes, y_idx = np.unique(np.asarray(y), return_inverse=True)
    if classes.size < 2:
        raise ValueError("training data contains a single class")
    if standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    z = (x - mean) / scale
    k = classes.size
    theta = np.zeros(k * z.shape[1] + k)
    if init is not None:
        theta = np.concatenate([init.weight.ravel(), init.bias])
    onehot = np.eye(k)[y_idx]
    f, g = loss_and_grad(theta, z, onehot, k, l2)
    history = [f]
    step = 1.0
    it = 0
    gnorm = float(np.linalg.norm(g))
    while it < max_iter and gnorm >= tol:
        t = step
        g2 = gnorm * gnorm
        while True:
            cand = theta - t * g
            f_new, g_new = loss_and_grad(cand, z, onehot, k, l2)
            if f_new <= f - 1e-4 * t * g2:
                break
            t *= 0.5
            if t < 1e-16:
                break
        if f_new > f:
            break  # no descent possible at machine precision
        s, dy = cand - theta, g_new - g
        sy = float(s @ dy)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        theta, f, g = cand, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
        it += 1
    f_dim = z.shape[1]
    return ProbeModel(
        weight=theta[: k * f_dim].reshape(k, f_dim),
        bias=theta[k * f_dim:],
        l2=l2,
        classes=classes,
        mean=mean,
        scale=scale,
        loss_history=history,
        n_iter=it,
        grad_norm=gnorm,
    )


def cv_accuracies(x, y, l2_grid: Sequence[float], folds: int = 5, seed: int = 42, **fit_kw) -> list[float]:
    """K-fold accuracy for every ``l2`` in the grid.

    Within a fold the grid is walked from the largest ``l2`` down, each fit
    warm-started from the previous one.
    """
    n = len(y)
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    order = sorted(range(len(l2_grid)), key=lambda i: -l2_grid[i])
    correct = np.zeros(len(l2_grid))
    for i, held in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != i])
        if np.unique(y[train]).size < 2:
            continue
        prev = None
        for gi in order:
            prev = fit_logreg(x[train], y[train], l2_grid[gi], init=prev, **fit_kw)
            correct[gi] += np.sum(prev.predict(x[held]) == y[held])
    return list(correct / n)


def train_logreg(
    ds: ProbeDataset,
    l2_grid: Sequence[float] = DEFAULT_L2_GRID,
    folds: int = 5,
    seed: int = 42,
    **fit_kw,
) -> tuple[ProbeModel, float]:
    """Choose ``l2`` by cross-validation on the train split, then refit on all of it.

    Ties in CV accuracy go to the smaller ``l2``.
    """
    x = ds.features[ds.train_idx]
    y = ds.labels[ds.train_idx]
    if np.unique(y).size < 2:
        raise ValueError("training split contains a single class")
    grid = sorted(float(v) for v in l2_grid)
    if len(grid) == 1:
        best = grid[0]
    else:
        scores = cv_accuracies(x, y, grid, folds, seed, **fit_kw)
        best = grid[int(np.argmax(scores))]
    return fit_logreg(x, y, best, **fit_kw), best


def position_index(n: int, position: str) -> int:
    """0-based row for ``first`` / ``middle`` (1-based ``ceil(n/2)``) / ``last``."""
    if position == "first":
        return 0
    if position == "middle":
        return math.ceil(n / 2) - 1
    if position == "last":
        return n - 1
    raise ValueError(f"position must be one of {POSITIONS}, got {position!r}")


def _traces(w, cfg, texts, threads):
    return thread_map(lambda t: forward_standard(w, cfg, tokenize(t, cfg)), texts, threads)


def kv_row(trace, layer: int, position: str) -> np.ndarray:
    k, v = trace.keys[layer - 1], trace.values[layer - 1]
    i = position_index(k.shape[1], position)
    return np.concatenate([k[:, i, :].ravel(), v[:, i, :].ravel()])


def extract_kv_features(
    w: Weights, cfg: ModelConfig, texts: Sequence[str], position: str = "last",
    layer: int | None = None, threads: int | None = None,
) -> np.ndarray:
    """Keys of all heads then values of all heads at one position: ``(N, 2 * d_model)``."""
    layer = cfg.n_layers if layer is None else layer
    if not 1 <= layer <= cfg.n_layers:
        raise ValueError(f"layer {layer} outside 1..{cfg.n_layers}")
    if not texts:
        raise ValueError("no texts to extract features from")
    position_index(1, position)
    return np.stack([kv_row(t, layer, position) for t in _traces(w, cfg, texts, threads)])


def extract_hidden_features(
    w: Weights, cfg: ModelConfig, texts: Sequence[str], layer: int,
    position: str = "last", threads: int | None = None,
) -> np.ndarray:
    """Hidden state of block ``layer`` (0 = embeddings) at one position."""
    if not 0 <= layer <= cfg.n_layers:
        raise ValueError(f"layer {layer} outside 0..{cfg.n_layers}")
    rows = []
    for t in _traces(w, cfg, texts, threads):
        h = t.hidden[layer]
        rows.append(h[position_index(h.shape[0], position)])
    return np.stack(rows)


def evaluate_probe(ds: ProbeDataset, l2_grid=DEFAULT_L2_GRID, seed: int = 42, **fit_kw) -> dict:
    model, l2 = train_logreg(ds, l2_grid, seed=seed, **fit_kw)
    return {
        "accuracy": model.accuracy(ds.features[ds.val_idx], ds.labels[ds.val_idx]),
        "train_accuracy": model.accuracy(ds.features[ds.train_idx], ds.labels[ds.train_idx]),
        "l2": l2,
    }


def probe_positions(
    w: Weights,
    cfg: ModelConfig,
    texts: Sequence[str],
    labels: Sequence,
    train_idx,
    val_idx,
    layer: int | None = None,
    positions: Sequence[str] = POSITIONS,
    l2_grid=DEFAULT_L2_GRID,
    seed: int = 42,
    threads: int | None = None,
) -> dict:
    """Validation accuracy of a KV probe at each position of one layer."""
    layer = cfg.n_layers if layer is None else layer
    if not 1 <= layer <= cfg.n_layers:
        raise ValueError(f"layer {layer} outside 1..{cfg.n_layers}")
    traces = _traces(w, cfg, texts, threads)
    labels = np.asarray(labels)
    report = {"layer": layer, "positions": {}}
    for pos in positions:
        feats = np.stack([kv_row(t, layer, pos) for t in traces])
        ds = ProbeDataset(feats, labels, train_idx, val_idx)
        report["positions"][pos] = evaluate_probe(ds, l2_grid, seed)
    report["chance"] = float(np.max(np.unique(labels[np.asarray(val_idx)], return_counts=True)[1]) / len(val_idx))
    return report


def probe_layers(
    w: Weights,
    cfg: ModelConfig,
    texts: Sequence[str],
    labels: Sequence,
    train_idx,
    val_idx,
    position: str = "last",
    l2_grid=DEFAULT_L2_GRID,
    seed: int = 42,
    threads: int | None = None,
) -> dict:
    """Hidden-state probe accuracy at every layer for one position."""
    traces = _traces(w, cfg, texts, threads)
    labels = np.asarray(labels)
    out = {"position": position, "layers": {}}
    for layer in range(cfg.n_layers + 1):
        feats = []
        for t in traces:
            h = t.hidden[layer]
            feats.append(h[position_index(h.shape[0], position)])
        ds = ProbeDataset(np.stack(feats), labels, train_idx, val_idx)
        out["layers"][layer] = evaluate_probe(ds, l2_grid, seed)
    return out
