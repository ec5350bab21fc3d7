"""Why re-route the final token's KV pair?

In a causal decoder, position 0 never sees anything after itself. This
script edits the *last* token of a sentence and measures how much the
first position's hidden state moves, with and without re-routing, then
shows how the prefix bias shifts attention mass onto the virtual entry.
"""

import numpy as np

from kvembed import ModelConfig, PREFIX_DISABLED, RerouteConfig, forward_rerouted, random_init
from kvembed.model import tokenize
from kvembed.reroute import dump_attention

cfg = ModelConfig()
w = random_init(cfg, seed=42)

text = "the river bank sees the quiet morning light."
edited = text[:-1] + "!"
a, b = tokenize(text, cfg), tokenize(edited, cfg)

print("change at position 0 of the last block after editing the final byte")
for layers in [(), (2,), (6,), tuple(range(1, 9))]:
    rc = RerouteConfig(layers)
    ha = forward_rerouted(w, cfg, a, rc).hidden[-1][0]
    hb = forward_rerouted(w, cfg, b, rc).hidden[-1][0]
    print(f"  layers {str(list(layers)):<26} max |dh| = {np.abs(ha - hb).max():.3e}")

# with the prefix disabled the re-routed code path reproduces plain attention
rc = RerouteConfig(tuple(range(1, 9)), PREFIX_DISABLED)
gap = np.abs(forward_rerouted(w, cfg, a, rc).final - forward_rerouted(w, cfg, a, RerouteConfig(())).final).max()
print(f"\nprefix disabled vs standard: max |diff| = {gap:.1e}")

print("\nmean attention weight on the virtual prefix (layer 4, all heads)")
for bias in (-4.0, 0.0, 1.0, 3.0):
    dumps = dump_attention(w, cfg, a, RerouteConfig((4,), bias), layer=4)
    share = np.mean([d.weights[:, 0].mean() for d in dumps])
    print(f"  bias {bias:+.1f}: {share:.3f}")
