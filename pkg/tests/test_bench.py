from __future__ import annotations

import json
import random

import pytest

from timem.bench import (
    BenchReport,
    BenchRow,
    generate_fixture,
    load_questions,
    manifold_report,
    run_bench,
    write_fixture,
)
from timem.errors import SchemaError
from timem.store import parse_transcript

from conftest import ingest_all, random_transcript


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    write_fixture(out, seed=42, n_users=3, total_turns=120, n_questions=30)
    return out


def fixture_transcripts(fixture_dir):
    return sorted(str(p) for p in fixture_dir.glob("transcript_*.json"))


def test_fixture_generation_deterministic(tmp_path):
    a = generate_fixture(seed=42)
    b = generate_fixture(seed=42)
    assert json.dumps(a) == json.dumps(b)
    c = generate_fixture(seed=43)
    assert json.dumps(a) != json.dumps(c)


def test_fixture_counts(fixture_dir):
    transcripts = [parse_transcript(p) for p in fixture_transcripts(fixture_dir)]
    assert len(transcripts) == 3
    assert sum(len(t.turns) for t in transcripts) == 120
    questions = load_questions(fixture_dir / "questions.jsonl")
    assert len(questions) == 30
    assert all(q.user_id in {"alice", "bob", "carol"} for q in questions)


def test_questions_schema_error(tmp_path):
    path = tmp_path / "q.jsonl"
    path.write_text('{"question": "x"}\n', encoding="utf-8")
    with pytest.raises(SchemaError):
        load_questions(path)


def test_bench_no_questions(tmp_path, fixture_dir):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    report = run_bench(fixture_transcripts(fixture_dir)[:1], empty)
    assert report.rows == [] and report.aggregates() == {}


def test_bench_report_aggregates_recompute():
    rows = [
        BenchRow("q0", "u", "simple", 5, 8, 3, 100, True, 1.0, 12.0),
        BenchRow("q1", "u", "hybrid", 5, 9, 4, 300, True, 0.5, 20.0),
        BenchRow("q2", "u", "complex", 5, 9, 4, 200, True, None, 8.0),
    ]
    report = BenchReport(rows=rows, recall_k=20)
    agg = report.aggregates()
    assert agg["mean_context_tokens"] == pytest.approx(200.0)
    assert agg["latency_p50_ms"] == 12.0
    assert agg["latency_p95_ms"] == 20.0
    assert agg["latency_p50_ms"] <= agg["latency_p95_ms"]
    assert agg["evidence_recall_at_20"] == pytest.approx(0.75)
    assert agg["queries"] == 3


def test_bench_full_fixture_run(fixture_dir):
    report = run_bench(fixture_transcripts(fixture_dir), fixture_dir / "questions.jsonl")
    assert len(report.rows) == 30
    assert all(r.ordering_ok for r in report.rows)
    agg = report.aggregates()
    assert agg["latency_p50_ms"] <= agg["latency_p95_ms"]
    assert 0.0 <= agg["evidence_recall_at_20"] <= 1.0
    complexities = {r.complexity for r in report.rows}
    assert complexities == {"simple", "hybrid", "complex"}


def test_bench_canonical_bytes_identical_across_runs(fixture_dir):
    paths = fixture_transcripts(fixture_dir)
    questions = fixture_dir / "questions.jsonl"
    first = run_bench(paths, questions).canonical_json()
    second = run_bench(paths, questions).canonical_json()
    assert first == second
    assert b"latency" not in first.encode()


def test_bench_gated_contracts_context(fixture_dir):
    paths = fixture_transcripts(fixture_dir)
    questions = fixture_dir / "questions.jsonl"
    gated = run_bench(paths, questions, gate=True)
    ungated = run_bench(paths, questions, gate=False)
    assert (gated.aggregates()["mean_context_tokens"]
            <= ungated.aggregates()["mean_context_tokens"])
    for g_row, u_row in zip(gated.rows, ungated.rows):
        assert g_row.context_tokens <= u_row.context_tokens


def test_bench_jsonl_one_row_per_query(fixture_dir, tmp_path):
    first_user = parse_transcript(fixture_transcripts(fixture_dir)[0]).user_id
    filtered = tmp_path / "q.jsonl"
    with open(fixture_dir / "questions.jsonl", encoding="utf-8") as f:
        rows = [line for line in f if json.loads(line)["user_id"] == first_user]
    filtered.write_text("".join(rows), encoding="utf-8")
    report = run_bench(fixture_transcripts(fixture_dir)[:1], filtered)
    lines = report.to_jsonl().strip().splitlines()
    assert len(lines) == len(report.rows) + 1  # rows + trailing aggregates
    for line in lines[:-1]:
        row = json.loads(line)
        assert {"query_id", "context_tokens", "latency_ms"} <= set(row)


def test_manifold_report_structure(engine):
    for user, seed in (("alice", 3), ("bob", 5)):
        ingest_all(engine, user, random_transcript(random.Random(seed), user, n_sessions=4))
    report = manifold_report(engine.tree)
    assert "silhouette" in report.header
    levels = {row.level for row in report.rows}
    assert levels == {1, 2, 3, 4, 5}
    l1 = next(r for r in report.rows if r.level == 1)
    assert set(l1.per_user) == {"alice", "bob"}
    assert l1.silhouette is not None and -1.0 <= l1.silhouette <= 1.0
    for user, (spread, r95) in l1.per_user.items():
        assert spread >= 0.0 and r95 >= 0.0
    json.loads(report.to_json())  # serializes cleanly
