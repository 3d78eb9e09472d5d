import math
from pathlib import Path

import pytest

import ehrdr

ROOT = Path(__file__).resolve().parents[2]


def test_clean_and_chunk():
    assert ehrdr.clean_note("Pt has HTN ___ and CHF!!!") == "pt has htn and chf!"
    text = " ".join(f"w{i}" for i in range(250))
    spans = [(c.start_word, c.end_word) for c in ehrdr.chunk_note("n", text)]
    assert spans == [(0, 100), (90, 190), (180, 250)]
    assert ehrdr.chunk_note("n", "a b c")[0].id == "n#0"


def test_matcher():
    a = ehrdr.TermAutomaton({"heart failure": ["c1"], "failure": ["c2"]})
    ms = a.find_mentions("acute heart failure")
    assert [(m.surface, m.start_char) for m in ms] == [("heart failure", 6), ("failure", 12)]
    assert ehrdr.TermAutomaton({"htn": ["c"]}).find_mentions("shtnx") == []


def test_loss_and_schedule():
    assert ehrdr.msl_loss([0.4], [0.6]) == pytest.approx(math.log1p(math.exp(0.2)) / 2 + math.log1p(math.exp(5)) / 50)
    assert ehrdr.mine([0.55, 0.65], [0.5]) == ([0], [0])
    cfg = ehrdr.MslConfig()
    cfg.lambda_ = 0.5
    assert ehrdr.msl_loss([], [], cfg) == 0.0
    assert ehrdr.lr_at(0, 100) == 0.0
    assert ehrdr.lr_at(10, 100) == pytest.approx(1e-4)


def test_metrics():
    assert ehrdr.average_precision(["a", "x", "b"], ["a", "b"]) == pytest.approx(0.8333, abs=1e-4)
    assert ehrdr.ndcg(["a", "x", "b"], ["a", "b"]) == pytest.approx(0.9197, abs=1e-4)
    assert ehrdr.reciprocal_rank(["x", "y", "z", "a"], ["a"]) == 0.25
    assert ehrdr.recall_at(["a", "b"], ["a", "c", "d"]) == pytest.approx(1 / 3)


def test_encoder_round_trip(tmp_path):
    enc = ehrdr.Encoder(["acute heart failure", "chest pain"], dim=8, seed=1)
    assert enc.dim == 8
    assert enc.similarity("chest pain", "chest pain") == pytest.approx(1.0)
    enc.save(tmp_path / "m.ckpt")
    again = ehrdr.Encoder.load(tmp_path / "m.ckpt")
    assert again.encode("heart") == enc.encode("heart")
    with pytest.raises(ehrdr.Error):
        ehrdr.Encoder.load(tmp_path / "missing.ckpt")


def test_pipeline_on_a_tiny_benchmark(tmp_path):
    queries = ehrdr.write_benchmark(tmp_path, seed=5, train_notes=20, eval_notes=4)
    assert queries > 0
    (tmp_path / "paths.conf").write_text(
        "notes = notes.jsonl\neval_notes = eval_notes.jsonl\nkg.concepts = kg/concepts.jsonl\n"
        "kg.relations = kg/relations.tsv\nabbreviations = abbreviations.tsv\n"
        "queries = eval/queries.tsv\nqrels = eval/qrels.tsv\nout = run\n"
    )
    report = ehrdr.run_pipeline(
        [ROOT / "configs" / "synthetic.conf", tmp_path / "paths.conf"],
        {"stage1.epochs": "1", "stage2.epochs": "1"},
    )
    assert set(report) == {"untrained", "stage1", "stage2"}
    assert 0.0 <= report["stage2"]["single"]["metrics"]["mrr"] <= 1.0
    stats = ehrdr.pair_stats(tmp_path / "run" / "pairs_stage1.jsonl")
    assert stats["stage"] == 1
    graph = ehrdr.KnowledgeGraph.load(tmp_path / "kg" / "concepts.jsonl", tmp_path / "kg" / "relations.tsv")
    assert len(graph) == 500
