"""Regenerate the frozen golden files under tests/data.

Only run this after a deliberate, reviewed change in numerics; the goldens
exist to catch unintended drift.

    python tests/data/regen_goldens.py
"""

import json
import sys
import tempfile
from pathlib import Path

from kvembed.corpus import byte_pattern_task, synthetic_sentences, toy_retrieval_corpus, toy_sts
from kvembed.evaluation import RetrievalCorpus, StrategySpec, eval_classify, eval_retrieval, eval_sts
from kvembed.id_select import id_trajectory
from kvembed.model import ModelConfig, random_init
from kvembed.reroute import RerouteConfig

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))
from pipeline_helpers import run_pipeline  # noqa: E402

SPECS = {
    "kv_embedding": StrategySpec("kv_embedding", reroute=RerouteConfig((1,), 1.0)),
    "prompteol": StrategySpec("prompteol"),
    "last_token": StrategySpec("last_token"),
    "mean": StrategySpec("mean"),
    "echo": StrategySpec("echo"),
}


def dump(name, obj):
    (HERE / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    print(f"wrote {name}")


def main():
    cfg = ModelConfig()
    w = random_init(cfg, 42)
    traj = id_trajectory(w, cfg, synthetic_sentences(50, 42))
    dump("golden_trajectory50.json", {"seed": 42, "model_seed": 42, "corpus_size": 50, "values": traj.values})

    corpus = RetrievalCorpus.from_dict(toy_retrieval_corpus())
    sts, cls = toy_sts(), byte_pattern_task()
    dump("golden_eval.json", {
        name: {
            "retrieval": eval_retrieval(w, cfg, corpus, spec).value,
            "sts": eval_sts(w, cfg, sts, spec).value,
            "classification": eval_classify(w, cfg, cls, spec).value,
        }
        for name, spec in SPECS.items()
    })

    with tempfile.TemporaryDirectory() as tmp:
        dump("golden_pipeline.json", run_pipeline(Path(tmp), threads=1))


if __name__ == "__main__":
    main()
