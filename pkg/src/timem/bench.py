"""Benchmark replay, synthetic fixtures, and embedding-geometry reports.

The bench ingests transcripts, replays a questions file through the
recall pipeline, and reports per-query context sizes and latency plus
evidence recall against known ground-truth turns. Latency is wall
clock and therefore excluded from the canonical (byte-comparable)
serialization.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from .config import EngineConfig
from .engine import MemoryEngine
from .errors import SchemaError, TimemError
from .metrics import separation_ratio, silhouette, spread_metrics
from .recall import Complexity
from .store import parse_transcript
from .timeutil import format_ts, parse_ts
from .tree import Level, MemoryTree


@dataclass
class BenchQuestion:
    query_id: str
    question: str
    user_id: str
    timestamp: datetime
    evidence_turn_ids: list[str] | None = None


def load_questions(path: str | Path) -> list[BenchQuestion]:
    """Questions file: one JSON object per line with keys
    question, user_id, timestamp, and optional evidence_turn_ids."""
    questions = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{i + 1}: invalid JSON: {exc}") from exc
            try:
                questions.append(BenchQuestion(
                    query_id=f"q{i:03d}",
                    question=data["question"],
                    user_id=data["user_id"],
                    timestamp=parse_ts(data["timestamp"]),
                    evidence_turn_ids=data.get("evidence_turn_ids"),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(f"{path}:{i + 1}: bad question record: {exc}") from exc
    return questions


@dataclass
class BenchRow:
    query_id: str
    user_id: str
    complexity: str
    leaves: int
    candidates: int
    retained: int
    context_tokens: int
    ordering_ok: bool
    evidence_recall: float | None = None
    latency_ms: float = 0.0


def _nearest_rank(sorted_values: list[float], pct: float) -> float:
    rank = max(1, math.ceil(pct * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    recall_k: int = 20

    def aggregates(self) -> dict:
        if not self.rows:
            return {}
        agg: dict = {
            "queries": len(self.rows),
            "mean_context_tokens": sum(r.context_tokens for r in self.rows) / len(self.rows),
            "ordering_ok": all(r.ordering_ok for r in self.rows),
        }
        latencies = sorted(r.latency_ms for r in self.rows)
        agg["latency_p50_ms"] = _nearest_rank(latencies, 0.50)
        agg["latency_p95_ms"] = _nearest_rank(latencies, 0.95)
        with_truth = [r.evidence_recall for r in self.rows if r.evidence_recall is not None]
        if with_truth:
            agg[f"evidence_recall_at_{self.recall_k}"] = sum(with_truth) / len(with_truth)
        return agg

    def canonical_json(self) -> str:
        """Deterministic serialization: latency fields are wall clock and
        excluded so identical runs compare byte-for-byte."""
        rows = []
        for row in self.rows:
            data = asdict(row)
            data.pop("latency_ms")
            rows.append(data)
        agg = {k: v for k, v in self.aggregates().items() if not k.startswith("latency_")}
        return json.dumps({"rows": rows, "aggregates": agg, "recall_k": self.recall_k},
                          sort_keys=True, indent=2) + "\n"

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(row), sort_keys=True) for row in self.rows]
        lines.append(json.dumps({"aggregates": self.aggregates()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        header = (f"{'query':<6} {'user':<8} {'cplx':<8} {'lv':>3} {'cand':>4} "
                  f"{'kept':>4} {'tokens':>7} {'ev.rec':>6} {'ms':>8}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            ev = f"{r.evidence_recall:.2f}" if r.evidence_recall is not None else "-"
            lines.append(f"{r.query_id:<6} {r.user_id:<8} {r.complexity:<8} "
                         f"{r.leaves:>3} {r.candidates:>4} {r.retained:>4} "
                         f"{r.context_tokens:>7} {ev:>6} {r.latency_ms:>8.2f}")
        for key, value in sorted(self.aggregates().items()):
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


def _rank_key_ok(result) -> bool:
    if result.query_time is None:
        return True
    keys = [(m.level, abs(result.query_time - m.interval.end), m.node_id)
            for m in result.memories]
    return keys == sorted(keys)


def run_bench(transcript_paths: list[str | Path], questions_path: str | Path,
              config: EngineConfig | None = None,
              engine: MemoryEngine | None = None,
              data_dir: str | Path | None = None,
              gate: bool = True,
              complexity_override: Complexity | None = None,
              skip_ingest: bool = False) -> BenchReport:
    """Ingest transcripts (with a trailing flush) and replay questions.

    Latency wraps the full per-query pipeline: planner, retrieval, and
    gating. Evidence recall is the fraction of a question's ground-truth
    turns whose segment node appears in the final memory set.
    """
    config = config or EngineConfig()
    if engine is None:
        engine = MemoryEngine.with_mock_backends(config=config, data_dir=data_dir)

    if not skip_ingest:
        for path in transcript_paths:
            transcript = parse_transcript(path)
            for turn in transcript.turns:
                engine.ingest_turn(transcript.user_id, turn)
            engine.flush(transcript.user_id)

    # ground-truth lookup: turn id -> its segment node id, per user
    turn_to_node: dict[str, dict[str, int]] = {}
    for user_id in engine.tree.users():
        mapping = {}
        for node in engine.tree.nodes_at_level(user_id, Level.SEGMENT):
            for turn_id in node.source_turn_ids:
                mapping[turn_id] = node.id
        turn_to_node[user_id] = mapping

    report = BenchReport(recall_k=config.leaf_budget)
    for q in load_questions(questions_path):
        start = time.perf_counter()
        try:
            result = engine.recall(q.user_id, q.question, t_q=q.timestamp, gate=gate,
                                   complexity_override=complexity_override)
        except TimemError as exc:
            exc.args = (f"query {q.query_id}: {exc}",) + exc.args[1:]
            raise
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        evidence = None
        if q.evidence_turn_ids:
            mapping = turn_to_node.get(q.user_id, {})
            final_ids = {m.node_id for m in result.memories}
            hits = sum(1 for t in q.evidence_turn_ids if mapping.get(t) in final_ids)
            evidence = hits / len(q.evidence_turn_ids)
        report.rows.append(BenchRow(
            query_id=q.query_id,
            user_id=q.user_id,
            complexity=result.plan.complexity.value,
            leaves=result.counts["leaves"],
            candidates=result.counts["candidates"],
            retained=result.counts["retained"],
            context_tokens=result.context_token_count,
            ordering_ok=_rank_key_ok(result),
            evidence_recall=evidence,
            latency_ms=elapsed_ms,
        ))
    return report


# ---------------------------------------------------------------------------
# synthetic fixture generation
# ---------------------------------------------------------------------------

_USERS = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"]

_ACTIVITIES = ["kayaking", "archery", "pottery", "birdwatching", "bouldering",
               "calligraphy", "orienteering", "beekeeping", "woodcarving",
               "stargazing", "fencing", "quilting"]
_PLACES = ["Lake Verano", "Mount Quarrel", "Cedar Hollow", "Brickmoor Hall",
           "Gullwing Pier", "Fernwhistle Park", "Old Copper Mill", "Saltmarsh Point"]
_DISHES = ["ramen", "paella", "goulash", "falafel", "pierogi", "laksa",
           "tagine", "gnocchi"]
_CITIES = ["Lisbon", "Osaka", "Tallinn", "Valparaiso", "Marrakesh", "Bergen"]
_INSTRUMENTS = ["cello", "banjo", "accordion", "marimba", "oboe"]

_TEMPLATES = [
    ("activity", "I went {activity} at {place} this weekend.",
     "That sounds wonderful! How was the {activity} at {place}?"),
    ("meal", "I cooked {dish} for dinner and it turned out great.",
     "Nice work! Homemade {dish} takes real patience."),
    ("trip", "I am planning a trip to {city} soon.",
     "Exciting! {city} has plenty to explore."),
    ("practice", "I practiced the {instrument} for two hours today.",
     "Two hours of {instrument} practice is impressive dedication."),
    ("preference", "I really love {activity}, it helps me unwind.",
     "It is great that {activity} gives you that balance."),
]


def generate_fixture(seed: int = 42, n_users: int = 3, total_turns: int = 120,
                     n_questions: int = 30,
                     start: str = "2023-05-20T09:00:00Z") -> tuple[list[dict], list[dict]]:
    """Deterministic transcripts plus questions with known evidence.

    Sessions step across day, ISO-week, and month boundaries so every
    consolidation level gets exercised.
    """
    rng = random.Random(seed)
    users = _USERS[:n_users]
    per_user = total_turns // n_users

    transcripts = []
    facts: dict[str, list[dict]] = {u: [] for u in users}
    for user in users:
        clock = parse_ts(start)
        sessions = []
        session_idx = 0
        turns_left = per_user
        while turns_left > 0:
            session_id = f"{user}-s{session_idx:02d}"
            session_turns = min(turns_left, rng.randint(2, 6))
            turns_left -= session_turns
            messages = []
            for t in range(session_turns):
                kind, user_tpl, asst_tpl = rng.choice(_TEMPLATES)
                slots = {
                    "activity": rng.choice(_ACTIVITIES),
                    "place": rng.choice(_PLACES),
                    "dish": rng.choice(_DISHES),
                    "city": rng.choice(_CITIES),
                    "instrument": rng.choice(_INSTRUMENTS),
                }
                user_text = user_tpl.format(**slots)
                asst_text = asst_tpl.format(**slots)
                messages.append({"speaker": "user", "text": user_text,
                                 "timestamp": format_ts(clock)})
                clock += timedelta(seconds=rng.randint(20, 90))
                messages.append({"speaker": "assistant", "text": asst_text,
                                 "timestamp": format_ts(clock)})
                facts[user].append({
                    "kind": kind, "slots": slots,
                    "turn_id": f"{session_id}/{t}",
                    "timestamp": format_ts(clock),
                })
                clock += timedelta(seconds=rng.randint(30, 180))
            sessions.append({
                "session_id": session_id,
                "start_timestamp": messages[0]["timestamp"],
                "turns": messages,
            })
            session_idx += 1
            # gaps from hours to a week-plus, so boundaries of every kind close
            clock += timedelta(hours=rng.choice([3, 8, 20, 30, 70, 200]))
        transcripts.append({"user_id": user, "sessions": sessions})

    questions = []
    per_user_q = n_questions // len(users)
    extra = n_questions - per_user_q * len(users)
    for idx, user in enumerate(users):
        name = user.capitalize()
        user_facts = facts[user]
        end_ts = format_ts(parse_ts(user_facts[-1]["timestamp"]) + timedelta(days=1))
        want = per_user_q + (1 if idx < extra else 0)
        for _ in range(want):
            style = rng.choice(["simple_place", "simple_dish", "hybrid", "complex"])
            if style == "simple_place":
                pool = [f for f in user_facts if f["kind"] == "activity"]
                if not pool:
                    style = "hybrid"
                else:
                    fact = rng.choice(pool)
                    questions.append({
                        "question": f"Where did {name} go {fact['slots']['activity']}?",
                        "user_id": user, "timestamp": end_ts,
                        "evidence_turn_ids": [fact["turn_id"]],
                    })
                    continue
            if style == "simple_dish":
                pool = [f for f in user_facts if f["kind"] == "meal"]
                if not pool:
                    style = "hybrid"
                else:
                    fact = rng.choice(pool)
                    questions.append({
                        "question": f"When did {name} cook {fact['slots']['dish']} for dinner?",
                        "user_id": user, "timestamp": end_ts,
                        "evidence_turn_ids": [fact["turn_id"]],
                    })
                    continue
            if style == "hybrid":
                pool = [f for f in user_facts if f["kind"] in ("activity", "preference")]
                if len(pool) >= 2:
                    chosen = rng.sample(pool, k=2)
                else:
                    chosen = pool
                acts = sorted({f["slots"]["activity"] for f in chosen})
                evidence = [f["turn_id"] for f in user_facts
                            if f["slots"].get("activity") in acts
                            and f["kind"] in ("activity", "preference")][:6]
                listing = " and ".join(acts) if acts else "anything"
                questions.append({
                    "question": f"What activities did {name} try, including {listing}?",
                    "user_id": user, "timestamp": end_ts,
                    "evidence_turn_ids": evidence or None,
                })
                continue
            pool = [f for f in user_facts if f["kind"] in ("activity", "preference")]
            fact = rng.choice(pool) if pool else rng.choice(user_facts)
            activity = fact["slots"]["activity"]
            questions.append({
                "question": f"Would {name} enjoy a {activity} retreat?",
                "user_id": user, "timestamp": end_ts,
                "evidence_turn_ids": [f["turn_id"] for f in user_facts
                                      if f["slots"].get("activity") == activity
                                      and f["kind"] in ("activity", "preference")][:5],
            })
    return transcripts, questions


def write_fixture(out_dir: str | Path, seed: int = 42, n_users: int = 3,
                  total_turns: int = 120, n_questions: int = 30) -> list[Path]:
    """Write fixture transcripts and questions; returns created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    transcripts, questions = generate_fixture(seed, n_users, total_turns, n_questions)
    paths = []
    for t in transcripts:
        path = out / f"transcript_{t['user_id']}.json"
        path.write_text(json.dumps(t, indent=2) + "\n", encoding="utf-8")
        paths.append(path)
    qpath = out / "questions.jsonl"
    with open(qpath, "w", encoding="utf-8") as f:
        for q in questions:
            f.write(json.dumps(q) + "\n")
    paths.append(qpath)
    return paths


# ---------------------------------------------------------------------------
# embedding-geometry report
# ---------------------------------------------------------------------------

MANIFOLD_HEADER = (
    "metric definitions: silhouette = mean (b-a)/max(a,b) with cosine distance, "
    "labels = users; spread = mean cosine distance to the normalized centroid; "
    "radius95 = nearest-rank 95th percentile of those distances; "
    "separation_ratio = mean pairwise centroid distance / mean distance of "
    "points to their own centroid"
)


@dataclass
class ManifoldLevelRow:
    level: int
    silhouette: float | None
    separation_ratio: float | None
    per_user: dict[str, tuple[float, float]]  # user -> (spread, radius95)


@dataclass
class ManifoldReport:
    header: str
    rows: list[ManifoldLevelRow]

    def to_json(self) -> str:
        data = {
            "header": self.header,
            "levels": [{
                "level": r.level,
                "silhouette": r.silhouette,
                "separation_ratio": r.separation_ratio,
                "per_user": {u: {"spread": s, "radius95": r95}
                             for u, (s, r95) in sorted(r.per_user.items())},
            } for r in self.rows],
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [self.header, ""]
        for row in self.rows:
            sil = f"{row.silhouette:.4f}" if row.silhouette is not None else "-"
            sep = f"{row.separation_ratio:.4f}" if row.separation_ratio is not None else "-"
            lines.append(f"L{row.level}: silhouette={sil} separation_ratio={sep}")
            for user, (spread, r95) in sorted(row.per_user.items()):
                lines.append(f"  {user}: spread={spread:.4f} radius95={r95:.4f}")
        return "\n".join(lines) + "\n"


def manifold_report(tree: MemoryTree, users: list[str] | None = None) -> ManifoldReport:
    """Per-level geometry of node embeddings across users."""
    users = users or tree.users()
    rows = []
    for level in Level:
        points, labels = [], []
        per_user: dict[str, tuple[float, float]] = {}
        for user in users:
            embeddings = [n.embedding for n in tree.nodes_at_level(user, level)
                          if n.embedding is not None]
            if not embeddings:
                continue
            per_user[user] = spread_metrics(embeddings)
            points.extend(embeddings)
            labels.extend([user] * len(embeddings))
        sil = sep = None
        if len(set(labels)) >= 2:
            sil = silhouette(points, labels)
            sep = separation_ratio(points, labels)
        rows.append(ManifoldLevelRow(
            level=int(level), silhouette=sil, separation_ratio=sep, per_user=per_user))
    return ManifoldReport(header=MANIFOLD_HEADER, rows=rows)
