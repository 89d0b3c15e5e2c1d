from __future__ import annotations

import random
from datetime import timedelta

import pytest

from timem import DialogTurn, EngineConfig, MemoryEngine
from timem.timeutil import parse_ts


@pytest.fixture
def engine() -> MemoryEngine:
    return MemoryEngine()


@pytest.fixture
def config() -> EngineConfig:
    return EngineConfig()


def make_turns(rows: list[tuple[str, str, str, str]]) -> list[DialogTurn]:
    """Build turns from (session_id, iso_ts, user_text, assistant_text) rows."""
    turns = []
    counters: dict[str, int] = {}
    for session_id, ts, user_text, assistant_text in rows:
        i = counters.get(session_id, 0)
        counters[session_id] = i + 1
        turns.append(DialogTurn(
            turn_id=f"{session_id}/{i}",
            session_id=session_id,
            timestamp=parse_ts(ts),
            user_text=user_text,
            assistant_text=assistant_text,
        ))
    return turns


_TOPICS = [
    ("kayaking", "Lake Verano"), ("archery", "Cedar Hollow"),
    ("pottery", "Brickmoor Hall"), ("bouldering", "Mount Quarrel"),
    ("stargazing", "Fernwhistle Park"), ("fencing", "Old Copper Mill"),
]


def random_transcript(rng: random.Random, user_id: str = "alice",
                      n_sessions: int | None = None) -> list[DialogTurn]:
    """Seeded synthetic transcript crossing day/week/month boundaries."""
    n_sessions = n_sessions or rng.randint(3, 12)
    clock = parse_ts("2023-05-%02dT%02d:00:00Z" % (rng.randint(1, 28), rng.randint(6, 20)))
    rows = []
    for s in range(n_sessions):
        session_id = f"{user_id}-s{s:02d}"
        for _ in range(rng.randint(1, 40)):
            activity, place = rng.choice(_TOPICS)
            rows.append((
                session_id, clock.strftime("%Y-%m-%dT%H:%M:%SZ"),
                f"I went {activity} at {place} recently.",
                f"How was the {activity} at {place}?",
            ))
            clock += timedelta(seconds=rng.randint(20, 600))
        clock += timedelta(hours=rng.choice([2, 10, 26, 80, 200, 400]))
    return make_turns(rows)


def ingest_all(engine: MemoryEngine, user_id: str, turns: list[DialogTurn],
               flush: bool = True) -> list:
    created = []
    for turn in turns:
        created += engine.ingest_turn(user_id, turn)
    if flush:
        created += engine.flush(user_id)
    return created
