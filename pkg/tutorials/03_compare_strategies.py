"""Side-by-side evaluation of the training-free strategies on toy data.

With random weights no strategy is expected to win; the point is that the
harness runs every strategy through identical metric code. Geometry
(alignment of STS pairs, uniformity of all sentences) is reported too.
"""

import numpy as np

from kvembed import ModelConfig, RerouteConfig, random_init
from kvembed.corpus import toy_retrieval_corpus, toy_sts
from kvembed.evaluation import RetrievalCorpus, StrategySpec, eval_retrieval, eval_sts
from kvembed.embed import embed_texts
from kvembed.geometry import alignment, uniformity

cfg = ModelConfig()
w = random_init(cfg, seed=42)
rc = RerouteConfig((1,), bias=1.0)
specs = {
    "kv_embedding": StrategySpec("kv_embedding", reroute=rc),
    "prompteol": StrategySpec("prompteol"),
    "last_token": StrategySpec("last_token"),
    "mean": StrategySpec("mean"),
    "echo": StrategySpec("echo"),
}

corpus = RetrievalCorpus.from_dict(toy_retrieval_corpus())
sts = toy_sts()
close = [r for r in sts if r["score"] >= 2.5]

print(f"{'strategy':<14}{'ndcg@10':>9}{'spearman':>10}{'align':>8}{'unif':>8}")
for name, spec in specs.items():
    ndcg = eval_retrieval(w, cfg, corpus, spec).value
    rho = eval_sts(w, cfg, sts, spec).value
    kw = {"strategy": spec.strategy, "reroute": spec.reroute}
    a = embed_texts(w, cfg, [r["text_a"] for r in close], **kw)
    b = embed_texts(w, cfg, [r["text_b"] for r in close], **kw)
    print(f"{name:<14}{ndcg:9.4f}{rho:10.4f}{alignment(list(zip(a, b))):8.3f}{uniformity(np.vstack([a, b])):8.3f}")
