import math

import pytest

import tacit


def test_corpus(corpus):
    assert "financial" in corpus.db_ids
    assert len(corpus) == sum(corpus.counts_by_db().values())
    t = corpus.task("1")
    assert t["db_id"] == "financial"
    train, test = corpus.split("financial", 0)
    assert train and test and not set(train) & set(test)
    assert corpus.split("financial", 0) == (train, test)
    with pytest.raises(tacit.TacitError):
        corpus.task("no-such-task")


def test_execute_and_score(corpus):
    out = tacit.execute(corpus, "financial", "SELECT 1 + 1")
    assert out["rows"] == [[2]]
    bad = tacit.execute(corpus, "financial", "SELEC nonsense")
    assert bad["status"] != "ok"
    gold = corpus.task("1")["SQL"]
    assert tacit.score(corpus, "1", gold)["z"] == 1
    assert tacit.score(corpus, "1", "SELECT -1")["z"] == 0
    assert tacit.outputs_match(corpus, "financial", "SELECT 1", "SELECT 1.0")
    assert not tacit.outputs_match(corpus, "financial", "SELECT 1", "SELECT 2")


def test_embedding_and_memory():
    v = tacit.embed("how many clients are women")
    assert math.isclose(sum(x * x for x in v), 1.0, rel_tol=1e-9)
    assert v == tacit.embed("how many clients are women")

    m = tacit.MemoryStore("financial", 3)
    assert m.insert("similar_question", "how many clients are women", "SELECT 1") == "Inserted"
    assert m.insert("similar_question", "how many clients are women", "SELECT 2") == "DuplicateKeyIgnored"
    m.insert("database_fact", "gender column", "gender is 'F' or 'M'")
    hits = m.retrieve("similar_question", "how many clients are women")
    assert hits[0][:2] == ("how many clients are women", "SELECT 1")
    assert hits[0][2] == pytest.approx(0.0, abs=1e-9)
    assert len(m) == 2

    low = tacit.MemoryStore("financial", 1)
    assert low.insert("database_fact", "k", "b") == "KindDisabledAtLevel"
    with pytest.raises(tacit.TacitError):
        low.size("no_such_kind")


def test_replay_episode(corpus, cassettes):
    r = tacit.replay_episode(corpus, cassettes / "d2_np0_online.jsonl")
    assert r["result"]["z"] == 1
    assert r["result"]["outcome"]["rows"] == [[96]]
    assert r["trajectory"]["feedback_rounds"] == 1
    assert r["summary"]


def test_run_protocol(corpus, cassettes, tmp_path):
    report = tacit.run_protocol(corpus, "financial", agent="P-3", protocol="new",
                                cassette=cassettes / "p3_new_financial_s0.jsonl",
                                out_root=tmp_path, run_id="py")
    assert tacit.round1(report["initial"]) == 29.7
    assert tacit.round1(report["final"]) == 48.6
    assert tacit.round1(report["delta_i"]) == 18.9
    assert (tmp_path / "py" / "report.json").is_file()
    assert "48.6" in tacit.report_text(report)


def test_backend_errors(corpus):
    with pytest.raises(tacit.TacitError):
        tacit.run_protocol(corpus, "financial", backend="replay")
    with pytest.raises(tacit.TacitError):
        tacit.run_protocol(corpus, "financial", agent="Q-9", backend="scripted")


def test_arithmetic():
    assert tacit.round1(35.05) in (35.0, 35.1)
    assert tacit.deltas(35.1, 92.0, 77.4) == pytest.approx((42.3, -14.6))
    basis = [[1.0, 0.0], [0.0, 1.0]]
    assert tacit.evidence_coverage(basis, basis) == 1.0
    assert tacit.evidence_coverage([[1.0, 0.0]], [[0.0, 1.0]]) == 0.0
    assert "P-3" in tacit.agent_labels()


def test_classify_error(corpus):
    category, _ = tacit.classify_error(corpus, "1", "SELECT COUNT(*) FROM loan")
    assert category == "TableSelection"
