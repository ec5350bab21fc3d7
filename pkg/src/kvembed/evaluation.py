"""STS, retrieval and classification scoring of embedding strategies.

Metric conventions: Spearman uses average ranks for ties; NDCG uses gain
``2**rel - 1`` with a ``log2(rank + 1)`` discount; queries without any
relevant document are left out of the mean (and counted in the report).
Rankings sort by descending cosine, then ascending doc id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import long_context_corpus
from .embed import EmbedRequest, embed_batch
from .model import ModelConfig, Weights
from .probing import DEFAULT_L2_GRID, ProbeDataset, train_logreg
from .reroute import RerouteConfig


# -- metrics -----------------------------------------------------------------

def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman rank correlation; ``None`` when either side has constant ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"spearman needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("spearman needs at least 2 observations")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    sxx, syy = rx @ rx, ry @ ry
    if sxx == 0 or syy == 0:
        return None
    return float(np.clip((rx @ ry) / math.sqrt(sxx * syy), -1.0, 1.0))


def dcg(grades: Iterable[float]) -> float:
    return float(sum((2.0 ** g - 1.0) / math.log2(r + 2) for r, g in enumerate(grades)))


def ndcg_at_k(
    ranking: Sequence[str],
    qrels: Mapping[str, int],
    k: int = 10,
    doc_ids: Iterable[str] | None = None,
) -> float | None:
    """NDCG@k of one ranked list; ``None`` when the query has no relevant document.

    If ``doc_ids`` is given, any ranked id outside it is rejected.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if doc_ids is not None:
        known = set(doc_ids)
        unknown = [d for d in ranking if d not in known]
        if unknown:
            raise ValueError(f"ranking contains unknown doc ids: {unknown[:5]}")
    ideal = dcg(sorted((g for g in qrels.values() if g > 0), reverse=True)[:k])
    if ideal == 0:
        return None
    return dcg(qrels.get(d, 0) for d in list(ranking)[:k]) / ideal


def rank_documents(query_vec: np.ndarray, doc_ids: Sequence[str], doc_mat: np.ndarray) -> list[str]:
    scores = np.clip(doc_mat @ query_vec, -1.0, 1.0)
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
    return [doc_ids[i] for i in order]


# -- data --------------------------------------------------------------------

@dataclass
class RetrievalCorpus:
    docs: dict[str, str]
    queries: dict[str, str]
    qrels: dict[str, dict[str, int]]

    def __post_init__(self):
        for qid, rels in self.qrels.items():
            if qid not in self.queries:
                raise ValueError(f"qrels reference unknown query {qid!r}")
            for did, grade in rels.items():
                if did not in self.docs:
                    raise ValueError(f"qrels for {qid!r} reference unknown doc {did!r}")
                if int(grade) != grade or grade < 0:
                    raise ValueError(f"relevance grade must be a non-negative integer, got {grade!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalCorpus":
        return cls(dict(d["docs"]), dict(d["queries"]), {q: dict(r) for q, r in d["qrels"].items()})


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
    return out


def _require(rec: dict, keys: Sequence[str], where: str) -> None:
    missing = [k for k in keys if k not in rec]
    if missing:
        raise ValueError(f"{where}: missing field(s) {missing}")


def load_sts(path) -> list[dict]:
    recs = read_jsonl(path)
    for i, r in enumerate(recs):
        _require(r, ("text_a", "text_b", "score"), f"{path}: record {i}")
    return recs


def load_classification(path) -> list[dict]:
    recs = read_jsonl(path)
    for i, r in enumerate(recs):
        _require(r, ("text", "label"), f"{path}: record {i}")
    return recs


def load_qrels(path) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 tab-separated fields")
            try:
                grade = int(row[2])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: grade {row[2]!r} is not an integer") from None
            qrels.setdefault(row[0], {})[row[1]] = grade
    return qrels


def load_retrieval(docs_path, queries_path, qrels_path) -> RetrievalCorpus:
    docs = {str(r["id"]): r["text"] for r in read_jsonl(docs_path)}
    queries = {str(r["id"]): r["text"] for r in read_jsonl(queries_path)}
    return RetrievalCorpus(docs, queries, load_qrels(qrels_path))


# -- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class StrategySpec:
    strategy: str = "kv_embedding"
    pooling: str | None = None
    reroute: RerouteConfig | None = None

    def request(self, text: str, role: str) -> EmbedRequest:
        rc = self.reroute if self.strategy in ("kv_embedding", "kv") else None
        return EmbedRequest(text, role, self.strategy, self.pooling, rc)

    def to_dict(self) -> dict:
        rc = self.reroute.to_dict() if self.reroute else {"layers": [], "bias": None}
        return {"strategy": self.strategy, "pooling": self.pooling, **rc}


@dataclass
class EvalReport:
    task: str
    metric: str
    value: float | None
    config: dict
    details: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.value is None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "degenerate": self.degenerate,
            "config": self.config,
            **self.details,
        }


def _embed_all(w, cfg, spec: StrategySpec, texts, role, threads) -> np.ndarray:
    res = embed_batch(w, cfg, [spec.request(t, role) for t in texts], threads)
    if res.errors:
        i = min(res.errors)
        raise ValueError(f"record {i}: {res.errors[i]}")
    return res.matrix()


def eval_sts(w: Weights, cfg: ModelConfig, records: Sequence[dict], spec: StrategySpec, threads=None) -> EvalReport:
    """Spearman between pairwise cosine and the gold score (both sides as queries)."""
    if len(records) < 2:
        raise ValueError("STS evaluation needs at least 2 records")
    a = _embed_all(w, cfg, spec, [r["text_a"] for r in records], "query", threads)
    b = _embed_all(w, cfg, spec, [r["text_b"] for r in records], "query", threads)
    cos = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    rho = spearman(cos, [float(r["score"]) for r in records])
    return EvalReport("sts", "spearman", rho, spec.to_dict(), {"n": len(records)})


def eval_retrieval(
    w: Weights,
    cfg: ModelConfig,
    corpus: RetrievalCorpus,
    spec: StrategySpec,
    k: int = 10,
    threads=None,
    doc_role: str = "context",
    query_role: str = "query",
) -> EvalReport:
    """Mean NDCG@k; by default docs use the ``context`` prompt and queries the ``query`` prompt."""
    doc_ids = list(corpus.docs)
    doc_mat = _embed_all(w, cfg, spec, [corpus.docs[d] for d in doc_ids], doc_role, threads)
    qids = [q for q in corpus.queries if q in corpus.qrels]
    q_mat = _embed_all(w, cfg, spec, [corpus.queries[q] for q in qids], query_role, threads) if qids else None
    per_query, skipped = {}, []
    for i, qid in enumerate(qids):
        ranking = rank_documents(q_mat[i], doc_ids, doc_mat)
        score = ndcg_at_k(ranking, corpus.qrels[qid], k)
        if score is None:
            skipped.append(qid)
        else:
            per_query[qid] = score
    skipped += [q for q in corpus.queries if q not in corpus.qrels]
    value = float(np.mean(list(per_query.values()))) if per_query else None
    return EvalReport(
        "retrieval", f"ndcg@{k}", value, spec.to_dict(),
        {"per_query": per_query, "skipped_queries": sorted(skipped), "n_docs": len(doc_ids),
         "roles": {"doc": doc_role, "query": query_role}},
    )


def eval_classify(
    w: Weights,
    cfg: ModelConfig,
    records: Sequence[dict],
    spec: StrategySpec,
    l2_grid=DEFAULT_L2_GRID,
    seed: int = 42,
    threads=None,
) -> EvalReport:
    """Test accuracy of a logistic-regression probe trained on train-split embeddings."""
    splits = [r.get("split", "train") for r in records]
    train = [i for i, s in enumerate(splits) if s == "train"]
    test = [i for i, s in enumerate(splits) if s == "test"]
    if not train or not test:
        raise ValueError("classification needs both 'train' and 'test' records")
    x = _embed_all(w, cfg, spec, [r["text"] for r in records], "query", threads)
    labels = np.asarray([r["label"] for r in records])
    ds = ProbeDataset(x, labels, train, test)
    model, l2 = train_logreg(ds, l2_grid, seed=seed)
    acc = model.accuracy(x[test], labels[test])
    return EvalReport("classification", "accuracy", acc, spec.to_dict(), {"l2": l2, "n_train": len(train), "n_test": len(test)})


def eval_self_retrieval(corpus: RetrievalCorpus) -> RetrievalCorpus:
    """Corpus whose queries are the documents themselves, each relevant only to itself."""
    queries = {f"q_{d}": t for d, t in corpus.docs.items()}
    qrels = {f"q_{d}": {d: 1} for d in corpus.docs}
    return RetrievalCorpus(dict(corpus.docs), queries, qrels)


def long_context_probe(
    w: Weights,
    cfg: ModelConfig,
    specs: Mapping[str, StrategySpec],
    lengths: Sequence[int] = (256, 512, 1024),
    n_docs: int = 8,
    seed: int = 42,
    threads=None,
) -> dict:
    """NDCG@10 per document length for each strategy (planted sentence at position 0)."""
    out: dict = {}
    for length in lengths:
        corpus = RetrievalCorpus.from_dict(long_context_corpus(length, n_docs, seed))
        for name, spec in specs.items():
            rep = eval_retrieval(w, cfg, corpus, spec, threads=threads)
            out.setdefault(name, {})[int(length)] = rep.value
    return out


def write_report(report: dict, out: str | Path | None = None) -> str:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is not None:
        Path(out).write_text(text + "\n", encoding="utf-8")
    return text
