"""Final-token KV re-routing.

At every selected layer the key/value pair of the last position is prepended
to that layer's K/V as a virtual position 0. All queries, including the last
one, can attend to it; an additive bias on its logit controls how much.

The prepended key is the cached post-RoPE ``k_n`` (still carrying position
``n``'s rotary phase). The virtual column adds no residual stream of its own.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import (
    ForwardTrace,
    ModelConfig,
    Weights,
    attention_scores,
    causal_attention,
    causal_mask,
    run_blocks,
)
from .numerics import PREFIX_DISABLED, softmax_rows

DEFAULT_BIAS = 1.0


@dataclass(frozen=True)
class RerouteConfig:
    """Layer set (1-based block indices) and prefix logit bias.

    ``bias`` may be :data:`~kvembed.numerics.PREFIX_DISABLED` to keep the
    re-routed code path but give the prefix zero weight.
    """

    layers: tuple[int, ...] = ()
    bias: float = DEFAULT_BIAS
    enabled: bool = True

    def __post_init__(self):
        layers = tuple(sorted({int(l) for l in self.layers}))
        object.__setattr__(self, "layers", layers)
        b = float(self.bias)
        if math.isnan(b) or b == math.inf:
            raise ValueError(f"bias must be finite (or PREFIX_DISABLED), got {self.bias}")
        object.__setattr__(self, "bias", b)

    def validate(self, cfg: ModelConfig) -> None:
        bad = [l for l in self.layers if not 1 <= l <= cfg.n_layers]
        if bad:
            raise ValueError(f"re-route layers {bad} outside 1..{cfg.n_layers}")

    @property
    def active_layers(self) -> tuple[int, ...]:
        return self.layers if self.enabled else ()

    @property
    def prefix_disabled(self) -> bool:
        return self.bias == PREFIX_DISABLED

    def to_dict(self) -> dict:
        return {
            "layers": list(self.layers),
            "bias": None if self.prefix_disabled else self.bias,
            "enabled": self.enabled,
        }


def reroute_layer_attention(q, k, v, k_n=None, v_n=None, bias: float = DEFAULT_BIAS):
    """Causal attention with ``(k_n, v_n)`` prepended as virtual position 0.

    Args:
        q, k, v: ``(n_heads, n, head_dim)`` post-RoPE projections.
        k_n, v_n: ``(n_heads, head_dim)`` prefix pair; defaults to the last
            row of ``k``/``v``.
        bias: added to every query's logit on the prefix column.

    Returns:
        ``(context, weights)`` with ``weights`` of shape ``(n_heads, n, n + 1)``;
        column 0 is the prefix.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if not (q.ndim == k.ndim == v.ndim == 3) or k.shape != v.shape or q.shape != k.shape:
        raise ValueError(f"q/k/v shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    k_n = k[:, -1] if k_n is None else np.asarray(k_n, dtype=np.float64)
    v_n = v[:, -1] if v_n is None else np.asarray(v_n, dtype=np.float64)
    expected = (k.shape[0], k.shape[2])
    if k_n.shape != expected or v_n.shape != expected:
        raise ValueError(f"prefix shape {k_n.shape}/{v_n.shape} does not match heads x head_dim {expected}")
    n = q.shape[1]
    prefix = attention_scores(q, k_n[:, None, :]) + bias
    real = np.where(causal_mask(n), -np.inf, attention_scores(q, k))
    weights = softmax_rows(np.concatenate([prefix, real], axis=-1))
    context = weights[..., :1] * v_n[:, None, :] + np.matmul(weights[..., 1:], v)
    return context, weights


def _attend_for(rc: RerouteConfig):
    layers = set(rc.active_layers)

    def attend(layer, q, k, v):
        if layer in layers:
            return reroute_layer_attention(q, k, v, bias=rc.bias)
        return causal_attention(q, k, v)

    return attend


def forward_rerouted(
    w: Weights, cfg: ModelConfig, tokens: Sequence[int], rc: RerouteConfig, record: dict | None = None
) -> ForwardTrace:
    """Single forward pass with re-routing at ``rc.layers``.

    Inside a re-routed layer the prefix is taken from that layer's own K/V,
    which already reflect any upstream re-routing.
    """
    rc.validate(cfg)
    if not rc.active_layers:
        return run_blocks(w, cfg, tokens, record=record)
    return run_blocks(w, cfg, tokens, attend=_attend_for(rc), record=record)


@dataclass
class AttentionDump:
    layer: int
    head: int
    weights: np.ndarray
    rerouted: bool = False

    def to_record(self) -> dict:
        rows, cols = self.weights.shape
        return {
            "layer": self.layer,
            "head": self.head,
            "rerouted": self.rerouted,
            "rows": rows,
            "cols": cols,
            "weights": self.weights.ravel().tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AttentionDump":
        weights = np.asarray(rec["weights"], dtype=np.float64).reshape(rec["rows"], rec["cols"])
        return cls(rec["layer"], rec["head"], weights, rec["rerouted"])


def dump_attention(
    w: Weights,
    cfg: ModelConfig,
    tokens: Sequence[int],
    rc: RerouteConfig,
    layer: int,
    head: int | None = None,
) -> AttentionDump | list[AttentionDump]:
    """Post-softmax weights used by ``layer`` (one head, or all if ``head`` is None)."""
    if not 1 <= layer <= cfg.n_layers:
        raise ValueError(f"layer {layer} outside 1..{cfg.n_layers}")
    if head is not None and not 0 <= head < cfg.n_heads:
        raise ValueError(f"head {head} outside 0..{cfg.n_heads - 1}")
    if head is None:
        return dump_all(w, cfg, tokens, rc, layers=[layer])
    return dump_all(w, cfg, tokens, rc, layers=[layer], heads=[head])[0]


def dump_all(
    w: Weights,
    cfg: ModelConfig,
    tokens: Sequence[int],
    rc: RerouteConfig,
    layers: Iterable[int] | None = None,
    heads: Iterable[int] | None = None,
) -> list[AttentionDump]:
    record: dict = {}
    forward_rerouted(w, cfg, tokens, rc, record=record)
    layers = list(range(1, cfg.n_layers + 1)) if layers is None else list(layers)
    heads = list(range(cfg.n_heads)) if heads is None else list(heads)
    active = set(rc.active_layers)
    return [
        AttentionDump(l, h, record[l][h].copy(), l in active) for l in layers for h in heads
    ]


def dumps_to_jsonl(dumps: Iterable[AttentionDump]) -> str:
    return "".join(json.dumps(d.to_record()) + "\n" for d in dumps)
