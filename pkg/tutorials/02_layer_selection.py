"""Choosing re-route layers from the intrinsic-dimension profile.

Last-token states of a prompted corpus are collected at every layer and
their TwoNN dimension is estimated. The window rule starts at the layer of
lowest ID; the multi-minimum rule unions windows at every late local
minimum. Pass a larger corpus (the CLI default is 1,000 sentences) for a
steadier profile.
"""

import sys

from kvembed import ModelConfig, id_trajectory, random_init, select_layers
from kvembed.corpus import synthetic_sentences

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = ModelConfig()
w = random_init(cfg, seed=42)
traj = id_trajectory(w, cfg, synthetic_sentences(n, seed=42))

print(f"TwoNN dimension of last-token states over {n} sentences")
for layer, value in enumerate(traj.values):
    bar = "#" * int(round(value))
    print(f"  layer {layer:2d}  {value:6.2f}  {bar}")
# layer 0 is a single point: every prompt ends in the same bytes

for strategy in ("window", "multimin"):
    sel = select_layers(traj, strategy)
    print(f"{strategy:>9}: layers {list(sel.layers)} (l* = {sel.l_star}, minima {list(sel.minima)})")
