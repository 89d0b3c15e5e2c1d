"""Five-level temporal memory tree.

Nodes live on levels Segment(1) < Session(2) < Day(3) < Week(4) <
Profile(5). Every parent-child edge must step exactly one level and the
parent's time interval must cover the child's. Each user owns a fully
isolated tree; node ids are monotonically increasing per user.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime
from enum import IntEnum

import numpy as np

from .errors import (
    ContainmentViolation,
    DuplicateId,
    LevelEdgeViolation,
    MissingParent,
    UnknownNode,
)


class Level(IntEnum):
    SEGMENT = 1
    SESSION = 2
    DAY = 3
    WEEK = 4
    PROFILE = 5


@dataclass(frozen=True)
class TemporalInterval:
    start: datetime
    end: datetime

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")

    def contains(self, other: "TemporalInterval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def hull(self, other: "TemporalInterval") -> "TemporalInterval":
        return TemporalInterval(min(self.start, other.start), max(self.end, other.end))


def interval_hull(intervals: list[TemporalInterval]) -> TemporalInterval:
    if not intervals:
        raise ValueError("hull of empty interval list")
    return TemporalInterval(
        min(iv.start for iv in intervals), max(iv.end for iv in intervals)
    )


@dataclass
class MemoryNode:
    id: int
    user_id: str
    level: Level
    interval: TemporalInterval
    text: str
    embedding: np.ndarray | None = None
    parent_id: int | None = None
    child_ids: list[int] = field(default_factory=list)
    source_turn_ids: list[str] = field(default_factory=list)
    created_at: datetime | None = None


@dataclass
class Violation:
    node_id: int
    rule: str
    detail: str


@dataclass
class TreeReport:
    node_count_per_level: dict[Level, int]
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations


_EMBED_NORM_TOL = 1e-6


class MemoryTree:
    """Per-user node store enforcing the structural rules on every edge.

    Mutations are serialized by an internal per-user lock; readers see
    either the pre- or post-insert state, never a half-linked node.
    """

    def __init__(self):
        self._nodes: dict[str, dict[int, MemoryNode]] = {}
        self._next_id: dict[str, int] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    def _user_lock(self, user_id: str) -> threading.RLock:
        with self._registry_lock:
            lock = self._locks.get(user_id)
            if lock is None:
                lock = self._locks[user_id] = threading.RLock()
                self._nodes.setdefault(user_id, {})
                self._next_id.setdefault(user_id, 1)
            return lock

    def ensure_user(self, user_id: str) -> None:
        """Register a user namespace (idempotent)."""
        self._user_lock(user_id)

    def users(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._nodes)

    def has_user(self, user_id: str) -> bool:
        with self._registry_lock:
            return user_id in self._nodes

    def allocate_id(self, user_id: str) -> int:
        with self._user_lock(user_id):
            node_id = self._next_id[user_id]
            self._next_id[user_id] = node_id + 1
            return node_id

    def get(self, user_id: str, node_id: int) -> MemoryNode:
        node = self._nodes.get(user_id, {}).get(node_id)
        if node is None:
            raise UnknownNode(f"user {user_id!r} has no node {node_id}")
        return node

    def insert_node(self, node: MemoryNode) -> int:
        with self._user_lock(node.user_id):
            nodes = self._nodes[node.user_id]
            if node.id in nodes:
                raise DuplicateId(f"node id {node.id} already used for {node.user_id!r}")
            if node.embedding is not None:
                norm = float(np.linalg.norm(node.embedding))
                if abs(norm - 1.0) > _EMBED_NORM_TOL:
                    raise ValueError(f"embedding norm {norm} not within {_EMBED_NORM_TOL} of 1")
            parent = None
            if node.parent_id is not None:
                parent = nodes.get(node.parent_id)
                if parent is None:
                    raise MissingParent(f"parent {node.parent_id} not found")
                self._check_edge(parent, node)
            nodes[node.id] = node
            if parent is not None and node.id not in parent.child_ids:
                parent.child_ids.append(node.id)
                self._sort_children(node.user_id, parent)
            if node.id >= self._next_id[node.user_id]:
                self._next_id[node.user_id] = node.id + 1
            return node.id

    def adopt(self, user_id: str, parent_id: int, child_ids: list[int]) -> None:
        """Link existing nodes under a parent, validating each edge."""
        with self._user_lock(user_id):
            parent = self.get(user_id, parent_id)
            for cid in child_ids:
                child = self.get(user_id, cid)
                self._check_edge(parent, child)
                child.parent_id = parent_id
                if cid not in parent.child_ids:
                    parent.child_ids.append(cid)
            self._sort_children(user_id, parent)

    @staticmethod
    def _check_edge(parent: MemoryNode, child: MemoryNode) -> None:
        if parent.level != child.level + 1:
            raise LevelEdgeViolation(
                f"parent level {int(parent.level)} over child level {int(child.level)}"
            )
        if not parent.interval.contains(child.interval):
            raise ContainmentViolation(
                f"child [{child.interval.start}, {child.interval.end}] outside "
                f"parent [{parent.interval.start}, {parent.interval.end}]"
            )

    def _sort_children(self, user_id: str, parent: MemoryNode) -> None:
        nodes = self._nodes[user_id]
        parent.child_ids.sort(key=lambda cid: (nodes[cid].interval.start, cid))

    def nodes_at_level(self, user_id: str, level: Level) -> list[MemoryNode]:
        """Nodes of one level, ordered by interval end (ties by id)."""
        nodes = list(self._nodes.get(user_id, {}).values())
        selected = [n for n in nodes if n.level == level]
        selected.sort(key=lambda n: (n.interval.end, n.id))
        return selected

    def all_nodes(self, user_id: str) -> list[MemoryNode]:
        return sorted(self._nodes.get(user_id, {}).values(), key=lambda n: n.id)

    def ancestors(self, user_id: str, node_id: int, levels: set[Level]) -> list[MemoryNode]:
        """Walk the parent chain, returning ancestors at the given levels."""
        node = self.get(user_id, node_id)
        found = []
        current = node
        while current.parent_id is not None:
            current = self.get(user_id, current.parent_id)
            if current.level in levels:
                found.append(current)
        return found

    def latest_at_level(self, user_id: str, level: Level) -> MemoryNode | None:
        nodes = self.nodes_at_level(user_id, level)
        return nodes[-1] if nodes else None

    def validate_tree(self, user_id: str) -> TreeReport:
        nodes = self._nodes.get(user_id, {})
        counts = {level: 0 for level in Level}
        violations: list[Violation] = []
        for node in nodes.values():
            counts[node.level] += 1
            if node.parent_id is not None:
                parent = nodes.get(node.parent_id)
                if parent is None:
                    violations.append(Violation(node.id, "missing-parent", f"parent {node.parent_id} absent"))
                    continue
                if parent.level != node.level + 1:
                    violations.append(Violation(
                        node.id, "level-edge",
                        f"parent level {int(parent.level)}, child level {int(node.level)}"))
                if not parent.interval.contains(node.interval):
                    violations.append(Violation(
                        node.id, "temporal-containment",
                        f"child [{node.interval.start}, {node.interval.end}] outside parent "
                        f"[{parent.interval.start}, {parent.interval.end}]"))
        for level in (Level.SESSION, Level.DAY, Level.WEEK, Level.PROFILE):
            below = counts[Level(level - 1)]
            if below > 0 and counts[level] > below:
                violations.append(Violation(
                    0, "progressive-consolidation",
                    f"level {int(level)} has {counts[level]} nodes over {below} at level {int(level) - 1}"))
        return TreeReport(node_count_per_level=counts, violations=violations)
