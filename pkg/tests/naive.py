"""Slow, loop-based reference forward pass used as a test oracle.

Written against the architecture description, sharing no code with the
package: per-token RMSNorm, per-pair rotary rotation, per-head softmax with
an optional virtual prefix entry.
"""

import math

import numpy as np


def rms(x, g, eps):
    r = math.sqrt(float(np.sum(x * x)) / x.size + eps)
    return x / r * g


def rot(x, pos, theta):
    out = x.copy()
    d = x.size
    for j in range(d // 2):
        a = pos * theta ** (-2.0 * j / d)
        c, s = math.cos(a), math.sin(a)
        out[2 * j] = x[2 * j] * c - x[2 * j + 1] * s
        out[2 * j + 1] = x[2 * j] * s + x[2 * j + 1] * c
    return out


def attend_head(qs, ks, vs, i, prefix=None, bias=0.0):
    """Output of query ``i`` over keys ``0..i`` (plus an optional prefix (k, v))."""
    hd = qs.shape[1]
    logits, vals = [], []
    if prefix is not None:
        logits.append(float(qs[i] @ prefix[0]) / math.sqrt(hd) + bias)
        vals.append(prefix[1])
    for j in range(i + 1):
        logits.append(float(qs[i] @ ks[j]) / math.sqrt(hd))
        vals.append(vs[j])
    m = max(logits)
    e = [math.exp(z - m) for z in logits]
    s = sum(e)
    return sum((ej / s) * vj for ej, vj in zip(e, vals))


def naive_forward(w, cfg, tokens, reroute_layers=(), bias=1.0):
    """Returns (hidden list, final normed states)."""
    H, hd = cfg.n_heads, cfg.head_dim
    n = len(tokens)
    x = np.array([w.token_embedding[t] for t in tokens])
    hidden = [x.copy()]
    for layer, lw in enumerate(w.layers, start=1):
        a = np.array([rms(x[i], lw.norm1, cfg.norm_eps) for i in range(n)])
        q, k, v = a @ lw.wq, a @ lw.wk, a @ lw.wv
        ctx = np.zeros_like(x)
        for h in range(H):
            sl = slice(h * hd, (h + 1) * hd)
            qs = np.array([rot(q[i, sl], i, cfg.rope_theta) for i in range(n)])
            ks = np.array([rot(k[i, sl], i, cfg.rope_theta) for i in range(n)])
            vs = v[:, sl]
            prefix = (ks[-1], vs[-1]) if layer in reroute_layers else None
            for i in range(n):
                ctx[i, sl] = attend_head(qs, ks, vs, i, prefix, bias)
        x = x + ctx @ lw.wo
        b = np.array([rms(x[i], lw.norm2, cfg.norm_eps) for i in range(n)])
        gate = b @ lw.ffn_gate
        x = x + ((gate / (1 + np.exp(-gate))) * (b @ lw.ffn_up)) @ lw.ffn_down
        hidden.append(x.copy())
    final = np.array([rms(x[i], w.final_norm, cfg.norm_eps) for i in range(n)])
    return hidden, final
