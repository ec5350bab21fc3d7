import contextlib
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from kvembed.cli import main, parse_bias, parse_layers

from pipeline_helpers import run_cli


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    path = tmp_path_factory.mktemp("m") / "model.bin"
    run_cli("gen-model", "--out", path)
    return path


@pytest.fixture(scope="module")
def trace(model, tmp_path_factory):
    path = tmp_path_factory.mktemp("t") / "trace.json"
    run_cli("id-trace", "--model", model, "--corpus-size", 40, "--out", path)
    return path


class TestParsers:
    def test_layers(self):
        assert parse_layers("3,5-7", 8) == ("explicit", (3, 5, 6, 7))
        assert parse_layers("auto:window", 8) == ("auto:window", None)
        assert parse_layers("none", 8) == ("explicit", ())
        assert parse_layers([2, 1], 8) == ("explicit", (1, 2))

    @pytest.mark.parametrize("bad", ["0", "9", "a", "5-3", "1-"])
    def test_layers_invalid(self, bad):
        with pytest.raises(ValueError):
            parse_layers(bad, 8)

    def test_bias(self):
        assert parse_bias("1.5") == 1.5
        assert parse_bias("disabled") == float("-inf")
        with pytest.raises(ValueError):
            parse_bias("big")


class TestGenModel:
    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        ra = json.loads(run_cli("gen-model", "--seed", 7, "--out", a))
        rb = json.loads(run_cli("gen-model", "--seed", 7, "--out", b))
        assert a.read_bytes() == b.read_bytes() and ra["sha256"] == rb["sha256"]

    def test_default_digest_is_stable(self, model):
        import hashlib
        digest = hashlib.sha256(model.read_bytes()).hexdigest()
        assert digest == "22b2185d40a8fde808f5c46232bb066acb816405713cb7306f83e5866c3c05e1"

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_layers": 2, "d_model": 16, "n_heads": 2, "head_dim": 8, "d_ffn": 32}))
        rep = json.loads(run_cli("gen-model", "--config", cfg, "--out", tmp_path / "m.bin"))
        assert rep["config"]["n_layers"] == 2

    def test_invalid_config_exit_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_heads": 3}))
        code, _, err = run("gen-model", "--config", cfg, "--out", tmp_path / "m.bin")
        assert code == 2 and str(cfg) in err

    def test_unwritable(self, tmp_path):
        code, _, err = run("gen-model", "--out", tmp_path / "missing" / "m.bin")
        assert code == 2 and "cannot write" in err


class TestEmbed:
    def test_auto_window_unit_norm(self, model, trace, tmp_path):
        inp = tmp_path / "in.jsonl"
        inp.write_text('{"id": "a", "text": "river bank"}\n{"id": "b", "text": "stone tree"}\n')
        out = run_cli("embed", "--model", model, "--strategy", "kv", "--layers", "auto:window",
                      "--trajectory", trace, "--input", inp)
        recs = [json.loads(l) for l in out.splitlines()]
        assert [r["id"] for r in recs] == ["a", "b"]
        sel = json.loads(trace.read_text())["selection"]["window"]["layers"]
        for r in recs:
            assert abs(np.linalg.norm(r["vector"]) - 1) < 1e-12
            assert r["layers"] == sel and r["layer_mode"] == "auto:window"

    def test_explicit_layers_win_and_echo(self, model, trace):
        out = run_cli("embed", "--model", model, "--layers", "2-3", "--trajectory", trace, "--text", "x")
        rec = json.loads(out)
        assert rec["layers"] == [2, 3] and rec["layer_mode"] == "explicit"

    def test_run_config_precedence(self, model, tmp_path):
        rc = tmp_path / "run.json"
        rc.write_text(json.dumps({"strategy": "mean", "layers": "1"}))
        rec = json.loads(run_cli("embed", "--model", model, "--run-config", rc, "--text", "x"))
        assert rec["strategy"] == "mean"
        rec = json.loads(run_cli("embed", "--model", model, "--run-config", rc, "--strategy", "kv", "--text", "x"))
        assert rec["strategy"] == "kv_embedding" and rec["layers"] == [1]

    def test_run_config_unknown_key(self, model, tmp_path):
        rc = tmp_path / "run.json"
        rc.write_text(json.dumps({"colour": "red"}))
        code, _, err = run("embed", "--model", model, "--run-config", rc, "--text", "x")
        assert code == 2 and "colour" in err

    def test_bad_record_named(self, model, tmp_path):
        inp = tmp_path / "in.jsonl"
        inp.write_text('{"text": "ok"}\n{"txt": "bad"}\n')
        code, out, err = run("embed", "--model", model, "--layers", "1", "--input", inp)
        assert code == 2 and "record 1" in err and out == ""

    def test_missing_model(self, tmp_path):
        code, _, err = run("embed", "--model", tmp_path / "nope.bin", "--text", "x")
        assert code == 2 and "nope.bin" in err

    def test_corrupt_model(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"KVEM\x01\x00")
        code, _, err = run("embed", "--model", bad, "--layers", "1", "--text", "x")
        assert code == 2 and "truncated" in err

    def test_both_model_sources(self, model, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{}")
        code, _, _ = run("embed", "--model", model, "--model-config", cfg, "--text", "x")
        assert code == 2

    def test_out_file(self, model, tmp_path):
        out = tmp_path / "e.jsonl"
        summary = json.loads(run_cli("embed", "--model", model, "--strategy", "echo", "--text", "y", "--out", out))
        assert summary["out"] == str(out)
        assert json.loads(out.read_text())["strategy"] == "echo"


class TestTraceAndSelect:
    def test_trace_report(self, trace):
        rep = json.loads(trace.read_text())
        assert len(rep["trajectory"]["values"]) == 9
        assert set(rep["selection"]) == {"window", "multimin"}
        assert rep["trajectory"]["layers"][1]["n_retained"] == 36

    def test_select_example(self, tmp_path):
        v = [10.0] + [1.0 + abs(l - 13) for l in range(1, 33)]
        p = tmp_path / "t.json"
        p.write_text(json.dumps({"values": v}))
        rep = json.loads(run_cli("select-layers", "--trajectory", p))
        assert rep["layers"] == [13, 14, 15, 16]
        rep = json.loads(run_cli("select-layers", "--trajectory", p, "--layers", "12-21"))
        assert rep["layers"] == list(range(12, 22)) and rep["mode"] == "explicit"

    def test_select_bad_file(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text('{"nothing": 1}')
        code, _, err = run("select-layers", "--trajectory", p)
        assert code == 2 and str(p) in err


class TestOtherCommands:
    def test_probe(self, model, tmp_path):
        inp = tmp_path / "p.jsonl"
        rng = np.random.default_rng(0)
        lines = []
        for i in range(60):
            label = i % 2
            text = "".join(rng.choice(list("abc"), 5)) + ("x" if label else "w")
            lines.append(json.dumps({"text": text, "label": label}))
        inp.write_text("\n".join(lines) + "\n")
        rep = json.loads(run_cli("probe", "--model", model, "--input", inp, "--positions", "first,last"))
        pos = rep["layers"][0]["positions"]
        assert set(pos) == {"first", "last"} and rep["n_train"] == 40
        assert pos["last"]["accuracy"] >= pos["first"]["accuracy"]

    def test_probe_bad_position(self, model, tmp_path):
        inp = tmp_path / "p.jsonl"
        inp.write_text('{"text": "a", "label": 0}\n{"text": "b", "label": 1}\n{"text": "c", "label": 0}\n')
        code, _, err = run("probe", "--model", model, "--input", inp, "--positions", "end")
        assert code == 2 and "end" in err

    def test_metrics(self, model, tmp_path):
        emb = tmp_path / "e.jsonl"
        emb.write_text(run_cli("embed", "--model", model, "--strategy", "mean",
                               "--text", "a", "--text", "b", "--text", "c"))
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("text0\ttext1\n")
        rep = json.loads(run_cli("metrics", "--embeddings", emb, "--pairs", pairs))
        assert rep["n_pairs"] == 1 and rep["n_points"] == 3
        pairs.write_text("text0\tmissing\n")
        code, _, err = run("metrics", "--embeddings", emb, "--pairs", pairs)
        assert code == 2 and "line 1" in err

    def test_eval_toy_retrieval_echoes_layers(self, model):
        rep = json.loads(run_cli("eval", "--model", model, "--task", "retrieval", "--layers", "1,2"))
        assert rep["layers"]["layers"] == [1, 2] and rep["metric"] == "ndcg@10"
        assert rep["config"]["layers"] == [1, 2]

    def test_eval_self_retrieval(self, model):
        rep = json.loads(run_cli("eval", "--model", model, "--task", "retrieval", "--strategy", "prompteol",
                                 "--self-retrieval", "--doc-role", "query"))
        assert rep["value"] == 1.0

    def test_eval_partial_retrieval_files(self, model, tmp_path):
        code, _, _ = run("eval", "--model", model, "--task", "retrieval", "--docs", tmp_path / "d.jsonl")
        assert code == 2

    def test_attn_dump(self, model):
        out = run_cli("attn-dump", "--model", model, "--text", "ab", "--layers", "2",
                      "--dump-layers", "1-2", "--head", "0")
        recs = [json.loads(l) for l in out.splitlines()]
        assert [(r["layer"], r["rerouted"], r["cols"]) for r in recs] == [(1, False, 4), (2, True, 5)]
        w = np.array(recs[1]["weights"]).reshape(4, 5)
        np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)

    def test_argparse_error_exit_2(self):
        with pytest.raises(SystemExit) as e:
            main(["eval", "--task", "nope"])
        assert e.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kvembed", "select-layers", "--trajectory", tmp_path / "x.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == "" and "no such file" in proc.stderr
