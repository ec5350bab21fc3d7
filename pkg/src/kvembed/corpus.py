"""Seeded synthetic corpora, so every analysis runs without external data."""

from __future__ import annotations

import numpy as np

WORDS = (
    "river bank water stone tree forest mountain valley city street house garden "
    "window door table chair book ribbon letter story music song dance light shadow "
    "morning evening night summer winter spring autumn rain snow wind cloud storm "
    "ocean island ship harbor bridge road train station market bread coffee apple "
    "orange lemon sugar salt fire smoke iron gold silver glass mirror clock bell "
    "teacher student doctor farmer painter singer child mother father friend king "
    "queen soldier sailor driver writer engine machine network signal number model "
    "system market price money trade energy power field theory science history "
    "language memory dream silence voice question answer reason problem method "
    "quiet bright dark cold warm quick slow heavy light gentle strong ancient modern "
    "small large green blue red yellow white black empty full early late"
).split()
VERBS = (
    "sees finds builds carries follows watches opens closes remembers crosses "
    "paints writes reads hears loves leaves reaches holds breaks fixes"
).split()
TOPICS = ("ocean", "music", "science", "market", "forest", "history", "engine", "winter")


def synthetic_sentences(n: int = 1000, seed: int = 42) -> list[str]:
    """``n`` distinct short sentences, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < n:
        k = int(rng.integers(3, 8))
        subj = " ".join(rng.choice(WORDS, 2))
        obj = " ".join(rng.choice(WORDS, k))
        s = f"the {subj} {rng.choice(VERBS)} the {obj}."
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def toy_retrieval_corpus(n_docs: int = 40, n_queries: int = 12, seed: int = 42) -> dict:
    """Small graded-relevance corpus.

    Each query is a few words lifted from one source document (grade 2);
    other documents on the same topic are grade 1.
    """
    rng = np.random.default_rng(seed)
    docs, topic_of = {}, {}
    for i in range(n_docs):
        topic = TOPICS[i % len(TOPICS)]
        words = [topic] + list(rng.choice(WORDS, int(rng.integers(8, 14))))
        rng.shuffle(words)
        did = f"d{i:03d}"
        docs[did] = " ".join(words)
        topic_of[did] = topic
    queries, qrels = {}, {}
    sources = rng.choice(n_docs, n_queries, replace=False)
    for j, src in enumerate(sorted(int(s) for s in sources)):
        did = f"d{src:03d}"
        words = docs[did].split()
        start = int(rng.integers(0, max(len(words) - 4, 1)))
        qid = f"q{j:03d}"
        queries[qid] = " ".join(words[start:start + 4])
        rel = {d: 1 for d, t in topic_of.items() if t == topic_of[did]}
        rel[did] = 2
        qrels[qid] = rel
    return {"docs": docs, "queries": queries, "qrels": qrels}


def toy_sts(n: int = 60, seed: int = 42) -> list[dict]:
    """Sentence pairs scored by word-set Jaccard overlap on a 0-5 scale."""
    rng = np.random.default_rng(seed)
    base = synthetic_sentences(n, seed + 1)
    records = []
    for s in base:
        words = s.rstrip(".").split()
        edit = list(words)
        for _ in range(int(rng.integers(0, len(words)))):
            edit[int(rng.integers(0, len(edit)))] = str(rng.choice(WORDS))
        b = " ".join(edit) + "."
        a_set, b_set = set(words), set(edit)
        score = 5.0 * len(a_set & b_set) / len(a_set | b_set)
        records.append({"text_a": s, "text_b": b, "score": score})
    return records


def parity_task(n: int = 1500, seed: int = 42, final_chars: str = "wxyz") -> tuple[list[str], np.ndarray]:
    """Short random strings labelled by the parity of their final byte."""
    rng = np.random.default_rng(seed)
    body = list("abcdefghijklmnopqrstuvwxyz ")
    texts = []
    for _ in range(n):
        s = "".join(rng.choice(body, int(rng.integers(4, 12)))) + str(rng.choice(list(final_chars)))
        texts.append(s)
    labels = np.array([t.encode("utf-8")[-1] % 2 for t in texts])
    return texts, labels


def byte_pattern_task(n_train: int = 120, n_test: int = 60, seed: int = 42) -> list[dict]:
    """Two classes that differ in which half of the alphabet they are drawn from."""
    rng = np.random.default_rng(seed)
    halves = (list("abcdefghijklm"), list("nopqrstuvwxyz"))
    records = []
    for i in range(n_train + n_test):
        label = i % 2
        text = "".join(rng.choice(halves[label], int(rng.integers(6, 16))))
        records.append({"text": text, "label": label, "split": "train" if i < n_train else "test"})
    return records


def long_context_corpus(length: int, n_docs: int = 8, seed: int = 42) -> dict:
    """Documents of ~``length`` bytes with a discriminative sentence at the start.

    Queries repeat the planted sentence; the filler is shared noise.
    """
    filler_rng = np.random.default_rng(seed + length)
    planted = synthetic_sentences(n_docs, seed + 101)
    docs, queries, qrels = {}, {}, {}
    for i, sent in enumerate(planted):
        text = sent
        while len(text.encode("utf-8")) < length:
            text += " " + " ".join(filler_rng.choice(WORDS, 6))
        docs[f"d{i:03d}"] = text.encode("utf-8")[:length].decode("utf-8", "ignore")
        queries[f"q{i:03d}"] = sent
        qrels[f"q{i:03d}"] = {f"d{i:03d}": 1}
    return {"docs": docs, "queries": queries, "qrels": qrels}
