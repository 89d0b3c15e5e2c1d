"""Three-stage recall: plan, hierarchical retrieval, gating, ranking.

A planner call labels the query simple/hybrid/complex and extracts up
to three keywords. Fused scoring activates base segments, ancestors are
propagated along the tree at the levels the strategy allows (with
per-level budgets), one gating call drops irrelevant candidates, and
the survivors are ordered by level then temporal proximity to the
query time. With both provider calls succeeding, recall costs exactly
two chat calls per query.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .backends import STOPWORDS, ChatBackend, ChatRequest, Embedder, Purpose
from .config import EngineConfig
from .errors import UnknownUser
from .indexing import Bm25Params, ScoredLeaf, fused_top_k, tokenize
from .metrics import count_tokens
from .prompts import PromptLibrary
from .timeutil import format_ts
from .tree import Level, MemoryNode, MemoryTree, TemporalInterval


class Complexity(str, Enum):
    SIMPLE = "simple"
    HYBRID = "hybrid"
    COMPLEX = "complex"


WIRE_CODES = {0: Complexity.SIMPLE, 1: Complexity.HYBRID, 2: Complexity.COMPLEX}
GATE_TEMPLATES = {
    Complexity.SIMPLE: "gate_simple",
    Complexity.HYBRID: "gate_hybrid",
    Complexity.COMPLEX: "gate_complex",
}


@dataclass
class RecallPlan:
    complexity: Complexity
    keywords: list[str]
    planner_fallback_used: bool = False

    def __post_init__(self):
        if len(self.keywords) > 3:
            raise ValueError("at most 3 keywords")


@dataclass(frozen=True)
class LevelBudget:
    caps: dict[Level, int]

    def levels(self) -> frozenset[Level]:
        return frozenset(self.caps)


def strategy_levels(complexity: Complexity,
                    config: EngineConfig | None = None) -> tuple[frozenset[Level], LevelBudget]:
    """Levels searched for a complexity label, with per-level caps."""
    caps = (config or EngineConfig()).level_caps(complexity.value)
    budget = LevelBudget({Level(lvl): cap for lvl, cap in sorted(caps.items())})
    return budget.levels(), budget


@dataclass
class Candidate:
    node: MemoryNode
    fused: float | None = None   # set for activated leaves
    via_leaf: int | None = None  # best-scoring leaf that reached an ancestor


@dataclass
class CandidateSet:
    entries: list[Candidate] = field(default_factory=list)

    def node_ids(self) -> list[int]:
        return [c.node.id for c in self.entries]


@dataclass
class RecalledMemory:
    node_id: int
    level: int
    text: str
    interval: TemporalInterval
    fused: float | None
    via_leaf: int | None


@dataclass
class RecallResult:
    memories: list[RecalledMemory]
    plan: RecallPlan
    counts: dict[str, int]
    context_token_count: int
    query_time: datetime | None
    gate_fallback_used: bool = False


def _fallback_keywords(query: str, limit: int = 3) -> list[str]:
    counts: dict[str, int] = {}
    for tok in tokenize(query):
        if tok in STOPWORDS:
            continue
        counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:limit]]


_JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


def _parse_json_reply(text: str) -> dict | None:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        pass
    m = _JSON_BLOCK.search(text or "")
    if m:
        try:
            return json.loads(m.group(0))
        except json.JSONDecodeError:
            return None
    return None


def rank_final(candidates: list[Candidate], t_q: datetime) -> list[Candidate]:
    """Order by level ascending, then |t_q - interval.end|, then id."""
    return sorted(candidates, key=lambda c: (
        int(c.node.level), abs(t_q - c.node.interval.end), c.node.id))


class RecallPipeline:
    def __init__(self, tree: MemoryTree, chat: ChatBackend, embedder: Embedder,
                 prompts: PromptLibrary | None = None,
                 config: EngineConfig | None = None):
        self.tree = tree
        self.chat = chat
        self.embedder = embedder
        self.config = config or EngineConfig()
        self.prompts = prompts or PromptLibrary(self.config.prompt_dir or None)

    # -- stage 1: planner ----------------------------------------------------

    def plan_query(self, query: str) -> RecallPlan:
        """One planner call; any failure falls back to a hybrid plan."""
        if not query.strip():
            raise ValueError("query must be non-empty")
        prompt = self.prompts.fill("planner", question=query)
        req = ChatRequest(prompt=prompt, purpose=Purpose.PLAN,
                          temperature=self.config.temperature_plan,
                          max_output=self.config.max_output_tokens)
        try:
            reply = self.chat.chat_complete(req)
        except Exception:
            reply = None
        data = _parse_json_reply(reply) if reply is not None else None
        if data is not None:
            try:
                complexity = WIRE_CODES[int(data["complexity"])]
                raw = data.get("keywords", [])
                keywords = [str(k).strip().lower() for k in raw if str(k).strip()][:3]
                return RecallPlan(complexity=complexity, keywords=keywords)
            except (KeyError, ValueError, TypeError):
                pass
        return RecallPlan(complexity=Complexity.HYBRID,
                          keywords=_fallback_keywords(query),
                          planner_fallback_used=True)

    # -- stage 2: hierarchical retrieval --------------------------------------

    def propagate_ancestors(self, user_id: str, leaves: list[ScoredLeaf],
                            complexity: Complexity) -> CandidateSet:
        """Leaves plus their ancestors at strategy levels, budget-capped.

        Ancestors reached via higher-scoring leaves win cap slots; a
        level stops accepting once its cap fills. The latest profile is
        injected when the strategy includes it but no leaf reached one.
        """
        levels, budget = strategy_levels(complexity, self.config)
        caps = dict(budget.caps)
        counts: dict[Level, int] = {lvl: 0 for lvl in caps}
        seen: set[int] = set()
        entries: list[Candidate] = []

        leaf_cap = caps.get(Level.SEGMENT, len(leaves))
        for leaf in leaves[:leaf_cap]:
            node = self.tree.get(user_id, leaf.node_id)
            entries.append(Candidate(node=node, fused=leaf.fused))
            seen.add(node.id)
            counts[Level.SEGMENT] += 1

        ancestor_levels = {lvl for lvl in levels if lvl != Level.SEGMENT}
        open_levels = set(ancestor_levels)
        for leaf in leaves[:leaf_cap]:
            if not open_levels:
                break  # every ancestor budget is full
            for ancestor in self.tree.ancestors(user_id, leaf.node_id, ancestor_levels):
                lvl = ancestor.level
                if lvl not in open_levels or ancestor.id in seen:
                    continue
                entries.append(Candidate(node=ancestor, via_leaf=leaf.node_id))
                seen.add(ancestor.id)
                counts[lvl] += 1
                if counts[lvl] >= caps[lvl]:
                    open_levels.discard(lvl)

        if Level.PROFILE in levels and counts.get(Level.PROFILE, 0) == 0:
            profile = self.tree.latest_at_level(user_id, Level.PROFILE)
            if profile is not None and profile.id not in seen:
                entries.append(Candidate(node=profile))
        return CandidateSet(entries=entries)

    # -- stage 3: gating -------------------------------------------------------

    def gate_candidates(self, query: str, complexity: Complexity,
                        candidates: CandidateSet) -> tuple[list[Candidate], bool]:
        """One gating call; returns (retained, fallback_used).

        Fail-open: candidates are all retained when the reply cannot be
        parsed, so a transient provider error never drops memories.
        """
        if not candidates.entries:
            return [], False
        ordered = sorted(candidates.entries, key=lambda c: (int(c.node.level), c.node.id))
        lines = []
        for i, cand in enumerate(ordered, start=1):
            text = cand.node.text.replace("\n", " ")
            lines.append(
                f"{i}. [L{int(cand.node.level)} | {format_ts(cand.node.interval.start)}"
                f" to {format_ts(cand.node.interval.end)}] {text}")
        prompt = self.prompts.fill(
            GATE_TEMPLATES[complexity],
            question=query,
            total_count=str(len(ordered)),
            numbered_memories="\n".join(lines))
        req = ChatRequest(prompt=prompt, purpose=Purpose.GATE,
                          temperature=self.config.temperature_gate,
                          max_output=self.config.max_output_tokens)
        try:
            reply = self.chat.chat_complete(req)
        except Exception:
            reply = None
        data = _parse_json_reply(reply) if reply is not None else None
        if data is None or not isinstance(data.get("relevant_ids"), list):
            return list(candidates.entries), True
        keep: set[int] = set()
        for value in data["relevant_ids"]:
            try:
                ordinal = int(value)
            except (TypeError, ValueError):
                continue
            if 1 <= ordinal <= len(ordered):  # out-of-range ordinals ignored
                keep.add(ordinal)
        return [cand for i, cand in enumerate(ordered, start=1) if i in keep], False

    # -- full pipeline ----------------------------------------------------------

    def recall(self, user_id: str, query: str, t_q: datetime | None = None,
               gate: bool = True,
               complexity_override: Complexity | None = None) -> RecallResult:
        if not self.tree.has_user(user_id):
            raise UnknownUser(f"no memory tree for user {user_id!r}")
        plan = self.plan_query(query)
        if complexity_override is not None:
            plan = RecallPlan(complexity=complexity_override, keywords=plan.keywords,
                              planner_fallback_used=plan.planner_fallback_used)

        pool = self.tree.nodes_at_level(user_id, Level.SEGMENT)
        t_ref = t_q
        if t_ref is None and pool:
            t_ref = max(n.interval.end for n in pool)
        if t_q is not None:
            pool = [n for n in pool if n.interval.end <= t_q]

        query_embedding = self.embedder.embed_text(query)
        leaves = fused_top_k(
            query_embedding, plan.keywords, pool,
            fusion_weight=self.config.fusion_weight,
            k=self.config.leaf_budget,
            params=Bm25Params(self.config.bm25_k1, self.config.bm25_b))
        candidates = self.propagate_ancestors(user_id, leaves, plan.complexity)
        if gate:
            retained, gate_fallback = self.gate_candidates(query, plan.complexity, candidates)
        else:
            retained, gate_fallback = list(candidates.entries), False
        ranked = rank_final(retained, t_ref) if t_ref is not None else list(retained)

        memories = [RecalledMemory(
            node_id=c.node.id, level=int(c.node.level), text=c.node.text,
            interval=c.node.interval, fused=c.fused, via_leaf=c.via_leaf,
        ) for c in ranked]
        return RecallResult(
            memories=memories,
            plan=plan,
            counts={
                "leaves": len(leaves),
                "candidates": len(candidates.entries),
                "retained": len(retained),
            },
            context_token_count=sum(count_tokens(m.text) for m in memories),
            query_time=t_ref,
            gate_fallback_used=gate_fallback,
        )
