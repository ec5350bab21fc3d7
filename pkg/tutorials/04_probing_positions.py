"""What does each position's KV state know about the end of the text?

Labels are the parity of the final byte, so only states that can see the
last token carry the answer. First-position KV is identical for every
input (it only sees BOS) and sits at chance; last-position KV does not.
"""

import numpy as np

from kvembed import ModelConfig, random_init
from kvembed.corpus import parity_task
from kvembed.probing import probe_positions

cfg = ModelConfig()
w = random_init(cfg, seed=42)
texts, labels = parity_task(900, seed=42)
train, val = np.arange(600), np.arange(600, 900)

rep = probe_positions(w, cfg, texts, labels, train, val)
print(f"KV probe accuracy at layer {rep['layer']} (chance {rep['chance']:.3f})")
for pos, r in rep["positions"].items():
    print(f"  {pos:<7} val {r['accuracy']:.3f}  train {r['train_accuracy']:.3f}  l2 {r['l2']:g}")
