import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvembed.model import forward_standard, tokenize
from kvembed.numerics import PREFIX_DISABLED
from kvembed.reroute import (
    AttentionDump,
    RerouteConfig,
    dump_all,
    dump_attention,
    dumps_to_jsonl,
    forward_rerouted,
    reroute_layer_attention,
)

from naive import naive_forward


def concat_oracle(q, k, v, bias):
    """Dense attention over literally concatenated [k_n | K], [v_n | V]."""
    H, n, hd = q.shape
    ctx = np.zeros_like(q)
    rows = np.zeros((H, n, n + 1))
    for h in range(H):
        kk = np.vstack([k[h, -1], k[h]])
        vv = np.vstack([v[h, -1], v[h]])
        for i in range(n):
            logits = [float(q[h, i] @ kk[0]) / math.sqrt(hd) + bias]
            logits += [float(q[h, i] @ kk[j + 1]) / math.sqrt(hd) if j <= i else -math.inf for j in range(n)]
            m = max(logits)
            e = np.array([math.exp(z - m) if z > -math.inf else 0.0 for z in logits])
            p = e / e.sum()
            rows[h, i] = p
            ctx[h, i] = p @ vv
    return ctx, rows


class TestLayerAttention:
    @pytest.mark.parametrize("n", [1, 2, 5, 17])
    def test_concat_oracle(self, rng, n):
        q, k, v = (rng.standard_normal((4, n, 8)) for _ in range(3))
        ctx, w = reroute_layer_attention(q, k, v, bias=0.7)
        octx, ow = concat_oracle(q, k, v, 0.7)
        np.testing.assert_allclose(ctx, octx, atol=1e-12)
        np.testing.assert_allclose(w, ow, atol=1e-12)

    def test_weights_shape_and_rows(self, rng):
        q, k, v = (rng.standard_normal((2, 6, 4)) for _ in range(3))
        _, w = reroute_layer_attention(q, k, v)
        assert w.shape == (2, 6, 7)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)
        # causal part stays upper-triangular zero
        assert np.all(np.triu(w[:, :, 1:], 1) == 0.0)

    def test_disabled_prefix_is_standard_attention(self, rng):
        from kvembed.model import causal_attention
        q, k, v = (rng.standard_normal((3, 9, 4)) for _ in range(3))
        ctx, w = reroute_layer_attention(q, k, v, bias=PREFIX_DISABLED)
        sctx, sw = causal_attention(q, k, v)
        assert np.all(w[..., 0] == 0.0)
        np.testing.assert_allclose(ctx, sctx, atol=1e-15)

    def test_large_negative_bias_approaches_limit(self, rng):
        from kvembed.model import causal_attention
        q, k, v = (rng.standard_normal((2, 5, 4)) for _ in range(3))
        sctx, _ = causal_attention(q, k, v)
        gaps = [np.abs(reroute_layer_attention(q, k, v, bias=b)[0] - sctx).max() for b in (0, -10, -40)]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-12

    def test_bias_raises_prefix_weight(self, rng):
        q, k, v = (rng.standard_normal((2, 5, 4)) for _ in range(3))
        lo = reroute_layer_attention(q, k, v, bias=0.0)[1][..., 0]
        hi = reroute_layer_attention(q, k, v, bias=2.0)[1][..., 0]
        assert np.all(hi > lo)

    def test_explicit_prefix_argument(self, rng):
        q, k, v = (rng.standard_normal((2, 4, 4)) for _ in range(3))
        a = reroute_layer_attention(q, k, v, bias=1.0)
        b = reroute_layer_attention(q, k, v, k[:, -1], v[:, -1], bias=1.0)
        np.testing.assert_array_equal(a[0], b[0])

    def test_rope_phase_is_kept_as_cached(self, rng):
        # the prefix key keeps its rotation at position n-1: scores against it
        # equal the dot with the last real key, plus the bias
        q, k, v = (rng.standard_normal((1, 6, 8)) for _ in range(3))
        _, w = reroute_layer_attention(q, k, v, bias=0.0)
        # last query: prefix logit == logit of its own real key, so equal weight
        assert abs(w[0, -1, 0] - w[0, -1, -1]) < 1e-15


class TestConfig:
    def test_sorted_dedup(self):
        assert RerouteConfig((5, 3, 5)).layers == (3, 5)

    def test_nan_and_inf_bias(self):
        with pytest.raises(ValueError):
            RerouteConfig((1,), float("nan"))
        with pytest.raises(ValueError):
            RerouteConfig((1,), float("inf"))

    def test_validate_range(self, toy):
        cfg, _ = toy
        with pytest.raises(ValueError, match="outside"):
            RerouteConfig((0, 9)).validate(cfg)

    def test_disabled_has_no_active_layers(self):
        assert RerouteConfig((1, 2), enabled=False).active_layers == ()


class TestForward:
    def test_matches_naive_oracle(self, tiny):
        cfg, w = tiny
        toks = tokenize("re-route me", cfg)
        tr = forward_rerouted(w, cfg, toks, RerouteConfig((1, 3), 0.5))
        hidden, final = naive_forward(w, cfg, toks, reroute_layers=(1, 3), bias=0.5)
        for a, b in zip(tr.hidden, hidden):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_layers_bitwise_standard(self, toy):
        cfg, w = toy
        toks = tokenize("no layers", cfg)
        a = forward_standard(w, cfg, toks)
        b = forward_rerouted(w, cfg, toks, RerouteConfig(()))
        for ha, hb in zip(a.hidden, b.hidden):
            np.testing.assert_array_equal(ha, hb)

    def test_prefix_disabled_matches_standard(self, toy):
        cfg, w = toy
        toks = tokenize("disabled prefix", cfg)
        a = forward_standard(w, cfg, toks)
        b = forward_rerouted(w, cfg, toks, RerouteConfig(tuple(range(1, 9)), PREFIX_DISABLED))
        assert max(np.abs(x - y).max() for x, y in zip(a.hidden, b.hidden)) < 1e-12

    def test_last_token_reaches_first_position(self, toy):
        cfg, w = toy
        toks = tokenize("abcdef", cfg)
        edited = toks[:-2] + [toks[-2] + 1, toks[-1]]
        rc = RerouteConfig((2,))
        a = forward_rerouted(w, cfg, toks, rc).hidden[-1]
        b = forward_rerouted(w, cfg, edited, rc).hidden[-1]
        assert np.abs(a[0] - b[0]).max() > 1e-6
        # layer 1 sits below the re-routed layer: position 0 unaffected there
        h1a = forward_rerouted(w, cfg, toks, rc).hidden[1]
        h1b = forward_rerouted(w, cfg, edited, rc).hidden[1]
        np.testing.assert_array_equal(h1a[0], h1b[0])

    def test_layer_outside_model(self, toy):
        cfg, w = toy
        with pytest.raises(ValueError):
            forward_rerouted(w, cfg, tokenize("x", cfg), RerouteConfig((9,)))

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.integers(3, 258), min_size=1, max_size=12), st.floats(-3, 3))
    def test_rows_stochastic(self, toy, toks, bias):
        cfg, w = toy
        record = {}
        forward_rerouted(w, cfg, [1] + toks, RerouteConfig((1, 4, 8), bias), record=record)
        for weights in record.values():
            np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-12)


class TestDump:
    def test_single_head(self, toy):
        cfg, w = toy
        toks = tokenize("hi", cfg)
        d = dump_attention(w, cfg, toks, RerouteConfig((3,)), layer=3, head=1)
        assert d.rerouted and d.weights.shape == (4, 5)
        d2 = dump_attention(w, cfg, toks, RerouteConfig((3,)), layer=2, head=1)
        assert not d2.rerouted and d2.weights.shape == (4, 4)

    def test_bad_head(self, toy):
        cfg, w = toy
        with pytest.raises(ValueError):
            dump_attention(w, cfg, [1, 2], RerouteConfig(()), layer=1, head=4)

    def test_jsonl_round_trip(self, tiny):
        cfg, w = tiny
        dumps = dump_all(w, cfg, tokenize("ab", cfg), RerouteConfig((2,)))
        lines = dumps_to_jsonl(dumps).splitlines()
        assert len(lines) == cfg.n_layers * cfg.n_heads
        back = [AttentionDump.from_record(json.loads(l)) for l in lines]
        for a, b in zip(dumps, back):
            assert (a.layer, a.head, a.rerouted) == (b.layer, b.head, b.rerouted)
            np.testing.assert_array_equal(a.weights, b.weights)
