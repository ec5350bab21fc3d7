"""``kvembed`` command line.

Every subcommand prints machine-readable JSON (or JSONL) on stdout and a
one-line human summary on stderr. Exit status: 0 on success, 2 on bad input
(unreadable file, malformed record, invalid option), 1 on internal faults.

Option precedence: explicit flag > ``--run-config`` JSON file > built-in
default. Keys of the run-config file are the long option names with dashes
replaced by underscores (``{"strategy": "mean", "layers": "auto:window"}``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import byte_pattern_task, parity_task, synthetic_sentences, toy_retrieval_corpus, toy_sts
from .embed import POOLINGS, STRATEGIES, STRATEGY_ALIASES, embed_batch
from .evaluation import (
    RetrievalCorpus,
    StrategySpec,
    eval_classify,
    eval_retrieval,
    eval_self_retrieval,
    eval_sts,
    load_classification,
    load_retrieval,
    load_sts,
    read_jsonl,
)
from .geometry import metric_report
from .id_select import IDTrajectory, id_trajectory, select_layers, select_layers_multimin, select_layers_window
from .model import ModelConfig, load_weights, random_init, tokenize, weights_to_bytes
from .numerics import PREFIX_DISABLED
from .probing import DEFAULT_L2_GRID, POSITIONS, ProbeDataset, probe_positions
from .reroute import DEFAULT_BIAS, RerouteConfig, dump_all, dumps_to_jsonl

DEFAULT_SEED = 42
DEFAULT_ID_CORPUS = 1000
AUTO_MODES = ("auto:window", "auto:multimin")

# built-in defaults; argparse defaults are None so file values can fill gaps
DEFAULTS = {
    "seed": DEFAULT_SEED,
    "strategy": "kv_embedding",
    "pooling": None,
    "layers": "auto:window",
    "bias": DEFAULT_BIAS,
    "role": "query",
    "threads": None,
    "trajectory": None,
    "id_corpus_size": DEFAULT_ID_CORPUS,
    "corpus_size": DEFAULT_ID_CORPUS,
    "trim": 0.1,
    "k": 10,
    "alpha": 2.0,
    "t": 2.0,
    "train_fraction": 2 / 3,
    "positions": ",".join(POSITIONS),
    "doc_role": "context",
    "query_role": "query",
    "select": "window",
}


class InputError(ValueError):
    """Bad user input; mapped to exit status 2."""


# -- helpers -----------------------------------------------------------------

def _emit(obj, out: str | None = None) -> None:
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        try:
            Path(out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise InputError(f"{out}: cannot write ({exc.strerror})") from None
        summary = {"out": str(out), "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()}
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text)


def _note(msg: str) -> None:
    print(f"kvembed: {msg}", file=sys.stderr)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None


def _read_records(path, fields) -> list[dict]:
    try:
        recs = read_jsonl(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    for i, r in enumerate(recs):
        if not isinstance(r, dict):
            raise InputError(f"{path}: record {i}: expected a JSON object")
        missing = [f for f in fields if f not in r]
        if missing:
            raise InputError(f"{path}: record {i}: missing field(s) {missing}")
    return recs


def _opt(args, name):
    v = getattr(args, name, None)
    return DEFAULTS.get(name) if v is None else v


def parse_bias(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("disabled", "off", "-inf"):
        return PREFIX_DISABLED
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError(f"--bias must be a number or 'disabled', got {value!r}") from None


def parse_layers(value, n_layers: int) -> tuple[str, tuple[int, ...] | None]:
    """``"auto:window"``/``"auto:multimin"`` or an explicit ``"12-21"``/``"10,11,20"`` list.

    Returns ``(mode, layers)``; ``layers`` is None for auto modes.
    """
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    text = str(value).strip().lower()
    if text in AUTO_MODES:
        return text, None
    if text in ("", "none"):
        return "explicit", ()
    layers = set()
    for part in text.split(","):
        part = part.strip()
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if lo > hi:
                    raise ValueError
                layers.update(range(lo, hi + 1))
            else:
                layers.add(int(part))
        except ValueError:
            raise InputError(f"--layers: cannot parse {part!r} (use e.g. 3,5-7 or auto:window)") from None
    bad = sorted(l for l in layers if not 1 <= l <= n_layers)
    if bad:
        raise InputError(f"--layers: {bad} outside 1..{n_layers}")
    return "explicit", tuple(sorted(layers))


def load_model(args):
    """Weights from ``--model``, else seeded random weights for ``--model-config`` (or defaults)."""
    seed = int(_opt(args, "seed"))
    model_path = getattr(args, "model", None)
    config_path = getattr(args, "model_config", None)
    if model_path and config_path:
        raise InputError("give either --model or --model-config, not both")
    if model_path:
        try:
            cfg, w = load_weights(model_path)
        except FileNotFoundError:
            raise InputError(f"{model_path}: no such file") from None
        except ValueError as exc:
            raise InputError(f"{model_path}: {exc}") from None
        return cfg, w, {"path": str(model_path)}
    cfg = _model_config(config_path)
    return cfg, random_init(cfg, seed), {"config": cfg.to_dict(), "seed": seed}


def _model_config(path) -> ModelConfig:
    if not path:
        return ModelConfig()
    data = _read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: model config must be a JSON object")
    try:
        return ModelConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _trajectory(args, cfg, w) -> tuple[IDTrajectory, dict]:
    path = _opt(args, "trajectory")
    if path:
        data = _read_json(path)
        data = data.get("trajectory", data) if isinstance(data, dict) else data
        try:
            traj = IDTrajectory.from_dict(data) if isinstance(data, dict) else IDTrajectory([float(v) for v in data], 0)
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path}: expected an id-trace report or {{\"values\": [...]}}") from None
        if traj.n_layers != cfg.n_layers:
            raise InputError(f"{path}: trajectory has {traj.n_layers} layers, model has {cfg.n_layers}")
        return traj, {"trajectory": str(path)}
    size = int(_opt(args, "id_corpus_size"))
    corpus = synthetic_sentences(size, int(_opt(args, "seed")))
    traj = id_trajectory(w, cfg, corpus, threads=_opt(args, "threads"))
    return traj, {"id_corpus": "synthetic", "id_corpus_size": size}


def resolve_reroute(args, cfg, w) -> tuple[RerouteConfig | None, dict]:
    """Re-route config for kv_embedding; an explicit ``--layers`` list always wins."""
    strategy = STRATEGY_ALIASES.get(_opt(args, "strategy"), _opt(args, "strategy"))
    if strategy != "kv_embedding":
        return None, {"mode": "n/a", "layers": []}
    mode, layers = parse_layers(_opt(args, "layers"), cfg.n_layers)
    info: dict = {"mode": mode}
    if layers is None:
        traj, src = _trajectory(args, cfg, w)
        sel = select_layers(traj, mode)
        layers = sel.layers
        info.update(src, selection=sel.to_dict())
    info["layers"] = list(layers)
    return RerouteConfig(layers, parse_bias(_opt(args, "bias"))), info


def _spec(args, cfg, w) -> tuple[StrategySpec, dict]:
    strategy = STRATEGY_ALIASES.get(_opt(args, "strategy"), _opt(args, "strategy"))
    if strategy not in STRATEGIES:
        raise InputError(f"--strategy must be one of {STRATEGIES} (or an alias {sorted(STRATEGY_ALIASES)})")
    rc, info = resolve_reroute(args, cfg, w)
    return StrategySpec(strategy, _opt(args, "pooling"), rc), info


# -- commands ----------------------------------------------------------------

def cmd_gen_model(args) -> int:
    cfg = _model_config(args.config or getattr(args, "model_config", None))
    seed = int(_opt(args, "seed"))
    data = weights_to_bytes(cfg, random_init(cfg, seed))
    try:
        Path(args.out).write_bytes(data)
    except OSError as exc:
        raise InputError(f"{args.out}: cannot write ({exc.strerror})") from None
    digest = hashlib.sha256(data).hexdigest()
    _emit({"out": str(args.out), "bytes": len(data), "sha256": digest, "seed": seed, "config": cfg.to_dict()})
    _note(f"wrote {len(data)} bytes to {args.out} (sha256 {digest[:12]})")
    return 0


def _embed_inputs(args) -> list[tuple[object, str]]:
    items = []
    if args.input:
        for i, r in enumerate(_read_records(args.input, ("text",))):
            items.append((r.get("id", i), r["text"]))
    for j, t in enumerate(args.text or ()):
        items.append((f"text{j}", t))
    if not items:
        raise InputError("embed needs --input FILE or at least one --text")
    return items


def cmd_embed(args) -> int:
    items = _embed_inputs(args)
    cfg, w, model_info = load_model(args)
    spec, layer_info = _spec(args, cfg, w)
    role = _opt(args, "role")
    try:
        reqs = [spec.request(text, role) for _, text in items]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = embed_batch(w, cfg, reqs, _opt(args, "threads"))
    if res.errors:
        i = min(res.errors)
        where = f"{args.input}: record {i}" if args.input else f"text {i}"
        raise InputError(f"{where}: {res.errors[i]}")
    lines = []
    for (id_, _), e in zip(items, res.embeddings):
        rec = e.to_record(id_)
        rec["layer_mode"] = layer_info["mode"]
        lines.append(json.dumps(rec) + "\n")
    _emit("".join(lines), args.out)
    _note(f"embedded {len(items)} text(s) with {spec.strategy}, layers {layer_info['layers']} ({layer_info['mode']})")
    return 0


def cmd_id_trace(args) -> int:
    cfg, w, model_info = load_model(args)
    if args.corpus:
        corpus = [r["text"] for r in _read_records(args.corpus, ("text",))]
        source = {"path": str(args.corpus)}
    else:
        size = int(_opt(args, "corpus_size"))
        corpus = synthetic_sentences(size, int(_opt(args, "seed")))
        source = {"synthetic": True, "size": size, "seed": int(_opt(args, "seed"))}
    try:
        traj = id_trajectory(
            w, cfg, corpus, role="context", prompt=not args.no_prompt,
            trim_fraction=float(_opt(args, "trim")), threads=_opt(args, "threads"),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = {
        "model": model_info,
        "corpus": source,
        "prompt": not args.no_prompt,
        "trim_fraction": float(_opt(args, "trim")),
        "trajectory": traj.to_dict(),
        "selection": {
            "window": select_layers_window(traj).to_dict(),
            "multimin": select_layers_multimin(traj).to_dict(),
        },
    }
    _emit(report, args.out)
    _note(f"ID over {len(corpus)} texts: " + " ".join(f"{v:.2f}" for v in traj.values))
    return 0


def cmd_select_layers(args) -> int:
    data = _read_json(args.trajectory)
    data = data.get("trajectory", data) if isinstance(data, dict) else {"values": data}
    try:
        traj = IDTrajectory.from_dict(data)
    except (KeyError, TypeError, ValueError):
        raise InputError(f"{args.trajectory}: expected an id-trace report or {{\"values\": [...]}}") from None
    strategy = _opt(args, "select")
    try:
        sel = select_layers(traj, strategy)
    except ValueError as exc:
        raise InputError(f"{args.trajectory}: {exc}") from None
    report = {"selection": sel.to_dict(), "mode": f"auto:{strategy.replace('-', '')}", "layers": list(sel.layers)}
    if args.layers is not None:
        mode, layers = parse_layers(args.layers, traj.n_layers)
        if layers is not None:
            report.update(mode="explicit", layers=list(layers))
        else:
            sel = select_layers(traj, mode)
            report.update(mode=mode, layers=list(sel.layers), selection=sel.to_dict())
    _emit(report, args.out)
    _note(f"layers {report['layers']} ({report['mode']})")
    return 0


def _probe_split(recs, labels, train_fraction, seed):
    splits = [r.get("split") for r in recs]
    if all(s is not None for s in splits):
        train = [i for i, s in enumerate(splits) if s == "train"]
        val = [i for i, s in enumerate(splits) if s in ("val", "validation", "test")]
        if not train or not val:
            raise InputError("split field needs both 'train' and 'val'/'test' records")
        return np.asarray(train), np.asarray(val)
    n_train = int(round(train_fraction * len(recs)))
    if not 0 < n_train < len(recs):
        raise InputError(f"--train-fraction {train_fraction} leaves an empty split")
    ds = ProbeDataset.split(np.zeros((len(recs), 1)), labels, n_train, seed=seed)
    return ds.train_idx, ds.val_idx


def cmd_probe(args) -> int:
    cfg, w, model_info = load_model(args)
    seed = int(_opt(args, "seed"))
    if args.input:
        recs = _read_records(args.input, ("text", "label"))
        source = {"path": str(args.input)}
    else:
        texts, labels = parity_task(1500, seed)
        recs = [{"text": t, "label": int(l), "split": "train" if i < 1000 else "val"}
                for i, (t, l) in enumerate(zip(texts, labels))]
        source = {"synthetic": "parity", "n_train": 1000, "n_val": 500}
    texts = [r["text"] for r in recs]
    labels = np.asarray([r["label"] for r in recs])
    if args.shuffle_labels:
        labels = np.random.default_rng(seed).permutation(labels)
    train, val = _probe_split(recs, labels, float(_opt(args, "train_fraction")), seed)
    positions = [p.strip() for p in str(_opt(args, "positions")).split(",") if p.strip()]
    bad = [p for p in positions if p not in POSITIONS]
    if bad:
        raise InputError(f"--positions: unknown {bad}; choose from {POSITIONS}")
    layers = [args.layer] if args.layer else [cfg.n_layers]
    if args.all_layers:
        layers = list(range(1, cfg.n_layers + 1))
    try:
        per_layer = [
            probe_positions(w, cfg, texts, labels, train, val, layer, positions,
                            DEFAULT_L2_GRID, seed, _opt(args, "threads"))
            for layer in layers
        ]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = {"model": model_info, "data": source, "shuffled_labels": bool(args.shuffle_labels),
              "n_train": int(len(train)), "n_val": int(len(val)), "layers": per_layer}
    _emit(report, args.out)
    last = per_layer[-1]
    _note(f"layer {last['layer']}: " + ", ".join(
        f"{p} {v['accuracy']:.3f}" for p, v in last["positions"].items()) + f" (chance {last['chance']:.3f})")
    return 0


def _read_pairs(path, ids) -> list[tuple[str, str]]:
    pairs = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                try:
                    r = json.loads(line)
                    a, b = str(r["a"]), str(r["b"])
                except (json.JSONDecodeError, KeyError):
                    raise InputError(f"{path}: line {lineno}: expected {{\"a\": id, \"b\": id}}") from None
            else:
                parts = line.split("\t")
                if len(parts) != 2:
                    raise InputError(f"{path}: line {lineno}: expected two tab-separated ids")
                a, b = parts
            for x in (a, b):
                if x not in ids:
                    raise InputError(f"{path}: line {lineno}: unknown embedding id {x!r}")
            pairs.append((a, b))
    return pairs


def cmd_metrics(args) -> int:
    recs = _read_records(args.embeddings, ("vector",))
    if len(recs) < 2:
        raise InputError(f"{args.embeddings}: need at least 2 embeddings")
    vecs, ids = [], {}
    for i, r in enumerate(recs):
        v = np.asarray(r["vector"], dtype=np.float64)
        if v.ndim != 1 or v.shape != np.shape(recs[0]["vector"]) or not np.all(np.isfinite(v)):
            raise InputError(f"{args.embeddings}: record {i}: vector has a bad shape or non-finite values")
        vecs.append(v)
        ids[str(r.get("id", i))] = i
    pairs = None
    if args.pairs:
        pairs = [(vecs[ids[a]], vecs[ids[b]]) for a, b in _read_pairs(args.pairs, ids)]
    rep = metric_report(np.stack(vecs), pairs, float(_opt(args, "alpha")), float(_opt(args, "t")))
    _emit(rep.to_dict(), args.out)
    _note(f"alignment {rep.alignment}, uniformity {rep.uniformity:.4f} over {rep.n_points} points")
    return 0


def _eval_data(args):
    seed = int(_opt(args, "seed"))
    try:
        if args.task == "sts":
            return load_sts(args.data) if args.data else toy_sts(seed=seed)
        if args.task == "classification":
            return load_classification(args.data) if args.data else byte_pattern_task(seed=seed)
        if args.docs or args.queries or args.qrels:
            if not (args.docs and args.queries and args.qrels):
                raise InputError("retrieval needs --docs, --queries and --qrels together")
            corpus = load_retrieval(args.docs, args.queries, args.qrels)
        else:
            corpus = RetrievalCorpus.from_dict(toy_retrieval_corpus(seed=seed))
        return eval_self_retrieval(corpus) if args.self_retrieval else corpus
    except FileNotFoundError as exc:
        raise InputError(f"{exc.filename}: no such file") from None


def cmd_eval(args) -> int:
    data = _eval_data(args)
    cfg, w, model_info = load_model(args)
    spec, layer_info = _spec(args, cfg, w)
    threads = _opt(args, "threads")
    task = args.task
    if task == "sts":
        rep = eval_sts(w, cfg, data, spec, threads)
    elif task == "classification":
        rep = eval_classify(w, cfg, data, spec, seed=int(_opt(args, "seed")), threads=threads)
    else:
        rep = eval_retrieval(w, cfg, data, spec, int(_opt(args, "k")), threads,
                             _opt(args, "doc_role"), _opt(args, "query_role"))
    out = rep.to_dict()
    out["layers"] = layer_info
    out["model"] = model_info
    _emit(out, args.out)
    value = "degenerate" if rep.value is None else f"{rep.value:.4f}"
    _note(f"{task} {rep.metric} = {value} ({spec.strategy}, layers {layer_info['layers']})")
    return 0


def cmd_attn_dump(args) -> int:
    cfg, w, model_info = load_model(args)
    mode, layers = parse_layers(_opt(args, "layers") if args.layers is not None else "none", cfg.n_layers)
    if layers is None:
        traj, _ = _trajectory(args, cfg, w)
        layers = select_layers(traj, mode).layers
    rc = RerouteConfig(layers, parse_bias(_opt(args, "bias")))
    try:
        tokens = tokenize(args.text, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    dump_layers = None
    if args.dump_layers:
        _, dump_layers = parse_layers(args.dump_layers, cfg.n_layers)
    heads = None if args.head is None else [args.head]
    if args.head is not None and not 0 <= args.head < cfg.n_heads:
        raise InputError(f"--head {args.head} outside 0..{cfg.n_heads - 1}")
    dumps = dump_all(w, cfg, tokens, rc, dump_layers, heads)
    _emit(dumps_to_jsonl(dumps), args.out)
    _note(f"dumped {len(dumps)} attention map(s); re-routed layers {list(rc.active_layers)} ({mode})")
    return 0


# -- parser ------------------------------------------------------------------

def _add_model(p):
    p.add_argument("--model", help="weight file written by gen-model")
    p.add_argument("--model-config", help="JSON model config for seeded random weights")
    p.add_argument("--seed", type=int, help=f"weight/corpus seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, help="worker threads (default: KVEMBED_THREADS, 0 = auto)")


def _add_strategy(p):
    p.add_argument("--strategy", help=f"one of {', '.join(STRATEGIES)} (default kv_embedding)")
    p.add_argument("--pooling", choices=POOLINGS)
    _add_layers(p)


def _add_layers(p):
    p.add_argument("--layers", help="re-route layers: 3,5-7 | none | auto:window | auto:multimin")
    p.add_argument("--bias", help="prefix logit bias, or 'disabled' (default 1.0)")
    p.add_argument("--trajectory", help="id-trace report used by auto layer modes")
    p.add_argument("--id-corpus-size", type=int, help="synthetic corpus size for auto modes without --trajectory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvembed", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--run-config", help="JSON file of option values (flags override it)")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.set_defaults(func=fn)
        return p

    p = add("gen-model", cmd_gen_model, "write seeded random weights")
    p.add_argument("--config", help="JSON model config (default toy model)")
    p.add_argument("--seed", type=int)
    p.set_defaults(model_config=None)

    p = add("embed", cmd_embed, "embed texts to JSONL")
    _add_model(p)
    _add_strategy(p)
    p.add_argument("--input", help="JSONL of {id, text}")
    p.add_argument("--text", action="append", help="text to embed (repeatable)")
    p.add_argument("--role", choices=("query", "context"))

    p = add("id-trace", cmd_id_trace, "intrinsic dimension of last-token states per layer")
    _add_model(p)
    p.add_argument("--corpus", help="JSONL of {text}; default is the synthetic corpus")
    p.add_argument("--corpus-size", type=int)
    p.add_argument("--trim", type=float, help="fraction of largest ratios censored (default 0.1)")
    p.add_argument("--no-prompt", action="store_true", help="feed raw text instead of the compression prompt")

    p = add("select-layers", cmd_select_layers, "pick re-route layers from a stored trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--select", choices=("window", "multimin"), help="auto strategy (default window)")
    p.add_argument("--layers", help="explicit override, always wins")

    p = add("probe", cmd_probe, "logistic-regression probe on KV states")
    _add_model(p)
    p.add_argument("--input", help="JSONL of {text, label[, split]}; default synthetic parity task")
    p.add_argument("--layer", type=int, help="block layer (default last)")
    p.add_argument("--all-layers", action="store_true")
    p.add_argument("--positions", help="comma list of first,middle,last")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--shuffle-labels", action="store_true", help="permuted-label control")

    p = add("metrics", cmd_metrics, "alignment / uniformity of stored embeddings")
    p.add_argument("--embeddings", required=True, help="JSONL from embed")
    p.add_argument("--pairs", help="positive pairs: JSONL {a, b} or TSV id_a<TAB>id_b")
    p.add_argument("--alpha", type=float)
    p.add_argument("--t", type=float)

    p = add("eval", cmd_eval, "STS / retrieval / classification evaluation")
    _add_model(p)
    _add_strategy(p)
    p.add_argument("--task", choices=("sts", "retrieval", "classification"), required=True)
    p.add_argument("--data", help="STS or classification JSONL (default: bundled toy data)")
    p.add_argument("--docs")
    p.add_argument("--queries")
    p.add_argument("--qrels", help="TSV query_id<TAB>doc_id<TAB>grade")
    p.add_argument("--k", type=int)
    p.add_argument("--doc-role", choices=("query", "context"))
    p.add_argument("--query-role", choices=("query", "context"))
    p.add_argument("--self-retrieval", action="store_true", help="queries are the documents verbatim")

    p = add("attn-dump", cmd_attn_dump, "dump post-softmax attention as JSONL")
    _add_model(p)
    _add_layers(p)
    p.add_argument("--text", required=True)
    p.add_argument("--dump-layers", help="layers to dump (default all)")
    p.add_argument("--head", type=int)
    return parser


def _apply_run_config(args, parser) -> None:
    path = getattr(args, "run_config", None)
    if not path:
        return
    data = _read_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}: run config must be a JSON object")
    for key, value in data.items():
        if not hasattr(args, key) or key in ("func", "command", "run_config"):
            raise InputError(f"{path}: unknown option {key!r} for {args.command}")
        if getattr(args, key) in (None, False):
            setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_run_config(args, parser)
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        _note(f"error: {exc}")
        return 2
    except Exception:
        traceback.print_exc(file=sys.stderr)
        _note("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
