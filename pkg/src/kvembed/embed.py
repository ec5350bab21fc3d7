"""Text-to-vector pipeline and the training-free baselines.

Strategies
----------
``kv_embedding``
    compression prompt, re-routed forward pass, hybrid pooling.
``prompteol``
    compression prompt, plain forward pass, last-token pooling.
``last_token`` / ``mean``
    raw text, plain forward pass, last-token / mean pooling.
``echo``
    the raw text is repeated once and pooled over the doubled sequence.

Pooling always reads the final-normed output of the last block, and every
returned vector is l2-normalised after pooling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import BOS, BYTE_OFFSET, EOS, ModelConfig, Weights, forward_standard, tokenize
from .numerics import l2_normalize
from .parallel import thread_map
from .reroute import RerouteConfig, forward_rerouted

ROLES = ("context", "query")
STRATEGIES = ("kv_embedding", "last_token", "mean", "prompteol", "echo")
POOLINGS = ("last", "mean", "hybrid")
STRATEGY_ALIASES = {"kv": "kv_embedding", "last": "last_token", "eol": "prompteol"}

DEFAULT_POOLING = {
    "kv_embedding": "hybrid",
    "prompteol": "last",
    "last_token": "last",
    "mean": "mean",
    "echo": "last",
}


def apply_prompt(text: str, role: str) -> str:
    """Wrap ``text`` in the compression template for ``role``."""
    prefix = _role_prefix(role)
    return f'"{prefix}: {text}" Compress the {prefix} in one word:'


def _role_prefix(role: str) -> str:
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    return "Context" if role == "context" else "Query"


def pool(hidden: np.ndarray, mode: str, span: tuple[int, int] | None = None) -> np.ndarray:
    """Pool an ``(n, d)`` matrix of states into one vector (not normalised).

    ``span`` restricts the *mean* part to rows ``[start, stop)``; the last
    row is always row ``n - 1``.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise ValueError(f"pooling needs a non-empty (n, d) matrix, got shape {hidden.shape}")
    if mode not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {mode!r}")
    last = hidden[-1]
    if mode == "last":
        return last.copy()
    rows = hidden if span is None else hidden[span[0]:span[1]]
    if rows.shape[0] == 0:
        raise ValueError(f"empty pooling span {span}")
    mean = rows.mean(axis=0)
    if mode == "mean":
        return mean
    return (last + mean) / 2.0


@dataclass(frozen=True)
class EmbedRequest:
    text: str
    role: str = "query"
    strategy: str = "kv_embedding"
    pooling: str | None = None
    reroute: RerouteConfig | None = None
    # "all": mean over every position; "text": only the tokens of ``text``
    mean_span: str = "all"
    # echo only: "last" over the doubled sequence, or "second_mean"
    echo_pooling: str = "last"

    def __post_init__(self):
        strategy = STRATEGY_ALIASES.get(self.strategy, self.strategy)
        object.__setattr__(self, "strategy", strategy)
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        _role_prefix(self.role)
        if strategy == "kv_embedding" and self.reroute is None:
            raise ValueError("kv_embedding needs a RerouteConfig")
        if strategy != "kv_embedding" and self.reroute is not None:
            raise ValueError(f"{strategy} does not take a RerouteConfig")
        if self.pooling is not None and self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.mean_span not in ("all", "text"):
            raise ValueError("mean_span must be 'all' or 'text'")
        if self.echo_pooling not in ("last", "second_mean"):
            raise ValueError("echo_pooling must be 'last' or 'second_mean'")

    @property
    def effective_pooling(self) -> str:
        return self.pooling or DEFAULT_POOLING[self.strategy]


@dataclass
class Embedding:
    vector: np.ndarray
    strategy: str
    pooling: str
    layers: tuple[int, ...] = ()
    bias: float | None = None
    prompt_hash: str = ""

    def to_record(self, id=None) -> dict:
        return {
            "id": id,
            "vector": self.vector.tolist(),
            "strategy": self.strategy,
            "pooling": self.pooling,
            "layers": list(self.layers),
            "bias": self.bias,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Embedding":
        return cls(
            np.asarray(rec["vector"], dtype=np.float64),
            rec.get("strategy", ""),
            rec.get("pooling", ""),
            tuple(rec.get("layers") or ()),
            rec.get("bias"),
        )


def prompt_hash(s: str) -> str:
    return hashlib.sha256(s.encode("utf-8")).hexdigest()[:16]


def build_input(req: EmbedRequest, cfg: ModelConfig) -> tuple[str, list[int], tuple[int, int]]:
    """Model input for a request: (fed string, token ids, text token span)."""
    if req.strategy in ("kv_embedding", "prompteol"):
        fed = apply_prompt(req.text, req.role)
        start = 1 + len(f'"{_role_prefix(req.role)}: '.encode("utf-8"))
        tokens = tokenize(fed, cfg)
        return fed, tokens, (start, start + len(req.text.encode("utf-8")))
    if req.strategy == "echo":
        fed = req.text + req.text
        body = [b + BYTE_OFFSET for b in req.text.encode("utf-8")]
        tokens = [BOS] + body + body + [EOS]
        if len(tokens) > cfg.max_seq:
            raise ValueError(
                f"echo input is {len(tokens)} tokens after doubling, max_seq is {cfg.max_seq}"
            )
        return fed, tokens, (1 + len(body), 1 + 2 * len(body))
    tokens = tokenize(req.text, cfg)
    return req.text, tokens, (1, len(tokens) - 1)


def embed(w: Weights, cfg: ModelConfig, req: EmbedRequest) -> Embedding:
    fed, tokens, text_span = build_input(req, cfg)
    if req.strategy == "kv_embedding":
        trace = forward_rerouted(w, cfg, tokens, req.reroute)
    else:
        trace = forward_standard(w, cfg, tokens)
    mode = req.effective_pooling
    span = text_span if req.mean_span == "text" else None
    if req.strategy == "echo" and req.echo_pooling == "second_mean":
        mode, span = "mean", text_span
    vec = l2_normalize(pool(trace.final, mode, span))
    rc = req.reroute
    return Embedding(
        vector=vec,
        strategy=req.strategy,
        pooling=mode,
        layers=rc.active_layers if rc else (),
        bias=(None if rc.prefix_disabled else rc.bias) if rc else None,
        prompt_hash=prompt_hash(fed),
    )


@dataclass
class BatchResult:
    embeddings: list[Embedding | None]
    errors: dict[int, Exception] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    def matrix(self) -> np.ndarray:
        """Stacked vectors; raises if any item failed."""
        if self.errors:
            i = min(self.errors)
            raise ValueError(f"request {i} failed: {self.errors[i]}")
        return np.stack([e.vector for e in self.embeddings])


def embed_batch(
    w: Weights, cfg: ModelConfig, reqs: Sequence[EmbedRequest], threads: int | None = None
) -> BatchResult:
    """Embed many requests; failures are collected by index instead of raised."""

    def run(req):
        try:
            return embed(w, cfg, req)
        except ValueError as exc:
            return exc

    out = thread_map(run, reqs, threads)
    errors = {i: r for i, r in enumerate(out) if isinstance(r, Exception)}
    return BatchResult([None if isinstance(r, Exception) else r for r in out], errors)


def embed_texts(
    w: Weights,
    cfg: ModelConfig,
    texts: Sequence[str],
    role: str = "query",
    strategy: str = "kv_embedding",
    reroute: RerouteConfig | None = None,
    pooling: str | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Convenience wrapper returning an ``(N, d_model)`` matrix of unit vectors."""
    strategy = STRATEGY_ALIASES.get(strategy, strategy)
    if strategy != "kv_embedding":
        reroute = None
    elif reroute is None:
        raise ValueError("kv_embedding needs a RerouteConfig")
    reqs = [EmbedRequest(t, role, strategy, pooling, reroute) for t in texts]
    return embed_batch(w, cfg, reqs, threads).matrix()


def embeddings_to_jsonl(items) -> str:
    """``items`` is an iterable of ``(id, Embedding)``."""
    return "".join(json.dumps(e.to_record(i)) + "\n" for i, e in items)
