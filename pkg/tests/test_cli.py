import json

import numpy as np
import pytest

from rignn.cli import content_hash, main
from rignn.ingest import corpus_stats, load_bundle
from rignn.numcore import ParameterSet


TINY = ["num_topics=3", "items_per_topic=6", "session_count=60", "vocab_per_topic=8"]


def run(*argv):
    return main(["--log-level", "WARNING", *map(str, argv)])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    sets = [a for kv in TINY for a in ("--set", kv)]
    assert run("synth", "--out", out, "--seed", 3, *sets) == 0
    return out


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert run("graph", "--session", "a,b", "--bogus") == 1
    assert run("frobnicate") == 1


def test_bad_values_are_usage_errors(tmp_path, corpus):
    assert run("graph", "--session", "a,b", "--topics", "0") == 1
    assert run("graph", "--session", "a,b", "--topics", "x,y") == 1
    assert run("train", "--bundle", corpus, "--topics", corpus / "oracle.topics",
               "--set", "bogus=1", "--out", tmp_path / "r") == 1
    assert run("train", "--bundle", corpus, "--topics", corpus / "oracle.topics",
               "--set", "dropout=2", "--out", tmp_path / "r") == 1
    assert run("eval", "--bundle", corpus, "--out", tmp_path / "m.json") == 1
    # the tiny catalog has 18 items, so a top-20 cut-off is meaningless
    assert run("eval", "--bundle", corpus, "--baseline", "s_pop", "--out", tmp_path / "m.json") == 1


def test_missing_input_is_runtime_error(tmp_path):
    assert run("stats", "--bundle", tmp_path / "absent") == 2
    assert run("ingest", "--input", tmp_path / "absent.jsonl", "--out", tmp_path / "b") == 2


def test_graph_prints_edges(capsys):
    assert run("graph", "--session", "a,b,c", "--topics", "1,2,1") == 0
    aig, rig = capsys.readouterr().out.split("RIG:")
    assert [ln.split()[:3] for ln in aig.splitlines()[1:]] == [["a", "->", "b"], ["b", "->", "c"]]
    assert [ln.split()[:3] for ln in rig.splitlines() if ln.strip()] == [["a", "->", "c"]]


def test_stats_match_library(corpus, capsys):
    assert run("stats", "--bundle", corpus) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(json.dumps(corpus_stats(load_bundle(corpus))))
    assert printed["avg_session_length"] == pytest.approx(
        printed["interactions"] / (printed["train_sessions"] + printed["test_sessions"]))


def test_synth_manifest(corpus):
    man = json.loads((corpus / "manifest.json").read_text())
    assert man["command"] == "synth" and man["seeds"] == [3]
    assert man["config"]["session_count"] == 60
    for path, digest in man["outputs"].items():
        assert content_hash(path) == digest


def test_flags_beat_config_file(tmp_path, corpus):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny model\nd = 8\nd_w = 8\nd_head = 4\nheads = 1\nepochs = 3\nseed = 4\n")
    out = tmp_path / "run"
    assert run("train", "--bundle", corpus, "--topics", corpus / "oracle.topics",
               "--config", cfg, "--epochs", 1, "--set", "seed=9", "--out", out) == 0
    config = json.loads((out / "config.json").read_text())
    assert config["train"]["epochs"] == 1
    assert config["model"]["d"] == 8 and config["model"]["seed"] == 9
    assert sorted(p.name for p in out.glob("epoch_*.npz")) == ["epoch_000.npz", "epoch_001.npz"]


def test_pipeline(tmp_path, corpus):
    lda = tmp_path / "lda.topics"
    assert run("topics", "--corpus", corpus, "--num-topics", 3, "--sweeps", 20,
               "--chains", 1, "--out", lda) == 0
    assert (tmp_path / "lda.topics.manifest.json").exists()
    out = tmp_path / "run"
    assert run("train", "--bundle", corpus, "--topics", lda, "--epochs", 1,
               "--set", "d=8", "--set", "d_w=8", "--set", "d_head=4", "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "train" and str(out / "best.npz") in man["outputs"]
    metrics = tmp_path / "metrics.json"
    assert run("eval", "--bundle", corpus, "--checkpoint", out / "best.npz", "--topics", lda,
               "--k", "5,10", "--out", metrics) == 0
    doc = json.loads(metrics.read_text())
    assert set(doc["metrics"]) == {"P@5", "MRR@5", "P@10", "MRR@10"}
    assert doc["examples"] == len(load_bundle(corpus).test_examples())
    params, meta = ParameterSet.load(out / "best.npz")
    assert meta["model"]["d"] == 8
    assert all(np.isfinite(a).all() for a in params.arrays().values())


def test_baseline_eval_deterministic(tmp_path, corpus):
    for name in ("a.json", "b.json"):
        assert run("eval", "--bundle", corpus, "--baseline", "s_knn", "--k", "5,10",
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
