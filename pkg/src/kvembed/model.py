"""A small pre-norm decoder-only transformer with exposed KV states.

The network is deliberately plain: byte-level tokens, multi-head causal
self-attention with rotary positions, RMSNorm and a gated (SwiGLU) FFN.
Every forward pass returns a :class:`ForwardTrace` holding the hidden state
after each block and the post-RoPE keys/values of every layer, which is what
re-routing, probing and intrinsic-dimension analysis consume.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import DEFAULT_ROPE_THETA, apply_rope, rmsnorm, silu, softmax_rows

PAD, BOS, EOS = 0, 1, 2
BYTE_OFFSET = 3
MIN_VOCAB = 256 + BYTE_OFFSET

MAGIC = b"KVEM"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    d_model: int = 64
    n_heads: int = 4
    head_dim: int = 16
    d_ffn: int = 128
    vocab_size: int = MIN_VOCAB
    max_seq: int = 2048
    rope_theta: float = DEFAULT_ROPE_THETA
    norm_eps: float = 1e-6

    def __post_init__(self):
        for f in fields(self)[:7]:
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        if self.n_heads * self.head_dim != self.d_model:
            raise ValueError(
                f"n_heads * head_dim = {self.n_heads * self.head_dim} != d_model = {self.d_model}"
            )
        if self.head_dim % 2:
            raise ValueError("head_dim must be even for rotary embeddings")
        if self.vocab_size < MIN_VOCAB:
            raise ValueError(f"vocab_size must be >= {MIN_VOCAB}, got {self.vocab_size}")
        if not (self.rope_theta > 0 and np.isfinite(self.rope_theta)):
            raise ValueError("rope_theta must be positive and finite")
        if not (self.norm_eps > 0 and np.isfinite(self.norm_eps)):
            raise ValueError("norm_eps must be positive and finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ffn_up: np.ndarray
    ffn_gate: np.ndarray
    ffn_down: np.ndarray
    norm1: np.ndarray
    norm2: np.ndarray


@dataclass(frozen=True)
class Weights:
    token_embedding: np.ndarray
    layers: tuple[LayerWeights, ...]
    final_norm: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        """All tensors in on-disk order."""
        out = [self.token_embedding]
        for lw in self.layers:
            out.extend(getattr(lw, name) for name in _LAYER_ORDER)
        out.append(self.final_norm)
        return out

    def check(self, cfg: ModelConfig) -> None:
        expected = tensor_shapes(cfg)
        got = self.tensors()
        if len(got) != len(expected):
            raise ValueError(f"weights hold {len(got)} tensors, config implies {len(expected)}")
        for i, (t, (name, shape)) in enumerate(zip(got, expected)):
            if t.shape != shape:
                raise ValueError(f"tensor {i} ({name}) has shape {t.shape}, config implies {shape}")


_LAYER_ORDER = ("wq", "wk", "wv", "wo", "ffn_up", "ffn_gate", "ffn_down", "norm1", "norm2")


def tensor_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ffn
    per_layer = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "ffn_up": (d, f), "ffn_gate": (d, f), "ffn_down": (f, d),
        "norm1": (d,), "norm2": (d,),
    }
    shapes = [("token_embedding", (cfg.vocab_size, d))]
    for layer in range(1, cfg.n_layers + 1):
        shapes.extend((f"layer{layer}.{name}", per_layer[name]) for name in _LAYER_ORDER)
    shapes.append(("final_norm", (d,)))
    return shapes


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _build_weights(cfg: ModelConfig, tensors: list[np.ndarray]) -> Weights:
    tensors = [_freeze(t) for t in tensors]
    k = len(_LAYER_ORDER)
    layers = tuple(
        LayerWeights(*tensors[1 + i * k: 1 + (i + 1) * k]) for i in range(cfg.n_layers)
    )
    w = Weights(tensors[0], layers, tensors[-1])
    w.check(cfg)
    return w


def random_init(cfg: ModelConfig, seed: int = 42) -> Weights:
    """Seeded weights: matrices ~ N(0, 1/d_model), norm gains = 1."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(cfg.d_model)
    tensors = []
    for _, shape in tensor_shapes(cfg):
        if len(shape) == 1:
            tensors.append(np.ones(shape))
        else:
            tensors.append(rng.standard_normal(shape) * scale)
    return _build_weights(cfg, tensors)


# -- tokenizer ---------------------------------------------------------------

def tokenize(text: str, cfg: ModelConfig | None = None, max_seq: int | None = None) -> list[int]:
    """``[BOS] + (byte + 3 for each UTF-8 byte) + [EOS]``."""
    data = text.encode("utf-8")
    limit = max_seq if max_seq is not None else (cfg.max_seq if cfg is not None else None)
    if limit is not None and len(data) + 2 > limit:
        raise ValueError(
            f"text is {len(data)} bytes ({len(data) + 2} tokens), limit is {limit} tokens"
        )
    return [BOS] + [b + BYTE_OFFSET for b in data] + [EOS]


def detokenize(ids: Sequence[int]) -> str:
    return bytes(i - BYTE_OFFSET for i in ids if i >= BYTE_OFFSET).decode("utf-8")


def check_tokens(tokens: Sequence[int], cfg: ModelConfig) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token sequence must be a non-empty 1-D sequence")
    if ids.size > cfg.max_seq:
        raise ValueError(f"sequence has {ids.size} tokens, max_seq is {cfg.max_seq}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
    return ids


# -- forward pass ------------------------------------------------------------

@dataclass
class ForwardTrace:
    """Per-layer states of one pass.

    ``hidden[0]`` is the token embedding, ``hidden[l]`` the output of block
    ``l``; ``keys[l-1]``/``values[l-1]`` are block ``l``'s post-RoPE K/V with
    shape ``(n_heads, n, head_dim)``. ``final`` is ``hidden[L]`` after the
    final RMSNorm.
    """

    hidden: list[np.ndarray]
    keys: list[np.ndarray]
    values: list[np.ndarray]
    final: np.ndarray

    @property
    def n_tokens(self) -> int:
        return self.hidden[0].shape[0]


@dataclass(frozen=True)
class KVCacheEntry:
    layer: int
    head: int
    key: np.ndarray
    value: np.ndarray


def last_kv(trace: ForwardTrace, layer: int) -> list[KVCacheEntry]:
    """The final position's ``(k_n, v_n)`` for every head of block ``layer`` (1-based)."""
    k, v = trace.keys[layer - 1], trace.values[layer - 1]
    return [KVCacheEntry(layer, h, k[h, -1].copy(), v[h, -1].copy()) for h in range(k.shape[0])]


def attention_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Scaled dot products ``q_i . k_j / sqrt(head_dim)`` per head, shape ``(H, n, m)``."""
    return np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])


@lru_cache(maxsize=64)
def causal_mask(n: int) -> np.ndarray:
    """Boolean ``(n, n)`` matrix, True where ``j > i`` (future, masked). Read-only."""
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    mask.setflags(write=False)
    return mask


def causal_attention(q, k, v):
    """Standard multi-head causal attention; returns (context, weights)."""
    scores = attention_scores(q, k)
    scores = np.where(causal_mask(q.shape[1]), -np.inf, scores)
    weights = softmax_rows(scores)
    return np.matmul(weights, v), weights


# attend(layer, q, k, v) -> (context, weights); layer is 1-based
AttendFn = Callable[[int, np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def _split_heads(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    n = x.shape[0]
    return x.reshape(n, cfg.n_heads, cfg.head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, hd = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * hd)


def _qkv(lw: LayerWeights, cfg: ModelConfig, x: np.ndarray, positions: np.ndarray):
    a = rmsnorm(x, lw.norm1, cfg.norm_eps)
    q = apply_rope(_split_heads(a @ lw.wq, cfg), positions, cfg.rope_theta)
    k = apply_rope(_split_heads(a @ lw.wk, cfg), positions, cfg.rope_theta)
    v = _split_heads(a @ lw.wv, cfg)
    return q, k, v


def _ffn(lw: LayerWeights, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    a = rmsnorm(x, lw.norm2, cfg.norm_eps)
    return (silu(a @ lw.ffn_gate) * (a @ lw.ffn_up)) @ lw.ffn_down


def run_blocks(
    w: Weights,
    cfg: ModelConfig,
    tokens: Sequence[int],
    attend: AttendFn | None = None,
    record: dict | None = None,
) -> ForwardTrace:
    """Shared forward loop; ``attend`` replaces the attention of any layer.

    If ``record`` is a dict, the post-softmax weights of every layer are
    stored in it under the 1-based layer index.
    """
    w.check(cfg)
    ids = check_tokens(tokens, cfg)
    positions = np.arange(ids.size)
    x = w.token_embedding[ids]
    hidden, keys, values = [x], [], []
    for layer, lw in enumerate(w.layers, start=1):
        q, k, v = _qkv(lw, cfg, x, positions)
        if attend is None:
            ctx, weights = causal_attention(q, k, v)
        else:
            ctx, weights = attend(layer, q, k, v)
        if record is not None:
            record[layer] = weights
        x = x + _merge_heads(ctx) @ lw.wo
        x = x + _ffn(lw, cfg, x)
        hidden.append(x)
        keys.append(k)
        values.append(v)
    final = rmsnorm(x, w.final_norm, cfg.norm_eps)
    return ForwardTrace(hidden, keys, values, final)


def forward_standard(w: Weights, cfg: ModelConfig, tokens: Sequence[int]) -> ForwardTrace:
    """Plain causal forward pass."""
    return run_blocks(w, cfg, tokens)


class KVCache:
    """Append-only per-layer key/value store for token-at-a-time decoding."""

    def __init__(self, cfg: ModelConfig):
        self.keys: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]
        self.values: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]

    def append(self, layer: int, k: np.ndarray, v: np.ndarray):
        self.keys[layer - 1].append(k)
        self.values[layer - 1].append(v)
        return np.concatenate(self.keys[layer - 1], axis=1), np.concatenate(self.values[layer - 1], axis=1)

    def __len__(self) -> int:
        return sum(k.shape[1] for k in self.keys[0])


def forward_incremental(w: Weights, cfg: ModelConfig, tokens: Sequence[int]) -> ForwardTrace:
    """Same network evaluated one token at a time through a :class:`KVCache`."""
    w.check(cfg)
    ids = check_tokens(tokens, cfg)
    cache = KVCache(cfg)
    rows: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers + 1)]
    for pos, tok in enumerate(ids):
        x = w.token_embedding[tok][None, :]
        rows[0].append(x)
        for layer, lw in enumerate(w.layers, start=1):
            q, k, v = _qkv(lw, cfg, x, np.array([pos]))
            k_all, v_all = cache.append(layer, k, v)
            weights = softmax_rows(attention_scores(q, k_all))
            x = x + _merge_heads(np.matmul(weights, v_all)) @ lw.wo
            x = x + _ffn(lw, cfg, x)
            rows[layer].append(x)
    hidden = [np.concatenate(r, axis=0) for r in rows]
    keys = [np.concatenate(k, axis=1) for k in cache.keys]
    values = [np.concatenate(v, axis=1) for v in cache.values]
    return ForwardTrace(hidden, keys, values, rmsnorm(hidden[-1], w.final_norm, cfg.norm_eps))


# -- weight file -------------------------------------------------------------

class WeightFileError(ValueError):
    """Malformed weight file; ``offset`` is the byte position of the first fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


_COUNT_FIELDS = ("n_layers", "d_model", "n_heads", "head_dim", "d_ffn", "vocab_size", "max_seq")
# seven config counts, then tensor count and total f64 payload count
_HEADER = struct.Struct("<4sI9Q2d")


def weights_to_bytes(cfg: ModelConfig, w: Weights) -> bytes:
    w.check(cfg)
    tensors = w.tensors()
    n_values = sum(t.size for t in tensors)
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION,
        *(getattr(cfg, name) for name in _COUNT_FIELDS),
        len(tensors), n_values,
        cfg.rope_theta, cfg.norm_eps,
    )
    body = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors)
    return header + body


def weights_from_bytes(data: bytes) -> tuple[ModelConfig, Weights]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise WeightFileError("bad magic", 0)
    if len(data) < _HEADER.size:
        raise WeightFileError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, *rest = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"version mismatch: file has {version}, reader supports {FORMAT_VERSION}", 4)
    counts, (n_tensors, n_values), (theta, eps) = rest[:7], rest[7:9], rest[9:]
    try:
        cfg = ModelConfig(**dict(zip(_COUNT_FIELDS, counts)), rope_theta=theta, norm_eps=eps)
    except ValueError as exc:
        raise WeightFileError(f"invalid config: {exc}", 8) from exc
    shapes = tensor_shapes(cfg)
    expected_values = sum(int(np.prod(s)) for _, s in shapes)
    if n_tensors != len(shapes) or n_values != expected_values:
        raise WeightFileError(
            f"shape/config contradiction: header declares {n_tensors} tensors / {n_values} values, "
            f"config implies {len(shapes)} / {expected_values}",
            8 + 8 * len(_COUNT_FIELDS),
        )
    offset = _HEADER.size
    tensors = []
    for name, shape in shapes:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(data):
            raise WeightFileError(f"truncated while reading {name}: file ends at {len(data)}", len(data))
        t = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        if not np.all(np.isfinite(t)):
            bad = int(np.argmax(~np.isfinite(t.ravel())))
            raise WeightFileError(f"non-finite value in {name}", offset + 8 * bad)
        tensors.append(t.astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise WeightFileError(f"{len(data) - offset} trailing bytes", offset)
    return cfg, _build_weights(cfg, tensors)


def save_weights(path, cfg: ModelConfig, w: Weights) -> None:
    Path(path).write_bytes(weights_to_bytes(cfg, w))


def load_weights(path) -> tuple[ModelConfig, Weights]:
    return weights_from_bytes(Path(path).read_bytes())
