"""Builds the memory tree from dialog turns.

Base segments are created online, one per ingested turn. Higher levels
are consolidated when their temporal group closes: a session closes
when the session id changes, calendar groups (day, week, month) close
lazily once a turn arrives past their window; closure is always
triggered by the next ingested turn or by an explicit flush, never by
wall-clock timers.

A group is assigned its children by interval start; its stored window
is the calendar (or session) window extended to the hull of the
children, so a session straddling a boundary stays fully contained in
its parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

from .backends import CONSOLIDATE_PURPOSES, ChatBackend, ChatRequest, Embedder
from .config import EngineConfig
from .errors import BackendFailure, NonMonotonicTimestamp
from .prompts import PromptLibrary
from .timeutil import (
    day_key,
    day_window,
    month_key,
    month_window,
    week_key,
    week_window,
)
from .tree import Level, MemoryNode, MemoryTree, TemporalInterval, interval_hull


@dataclass
class DialogTurn:
    turn_id: str
    session_id: str
    timestamp: datetime
    user_text: str
    assistant_text: str


@dataclass
class TemporalGroup:
    level: Level
    key: str                      # session id | calendar day | ISO week | month
    window: TemporalInterval      # base window, hull-extended as members join
    base_end: datetime            # closure boundary before any hull extension
    anchor: datetime              # first member's interval start
    open: bool = True
    member_ids: list[int] = field(default_factory=list)


@dataclass
class ConsolidationRequest:
    level: Level
    child_texts: list[str]
    history_texts: list[str]
    instruction_id: str

    def __post_init__(self):
        if not self.child_texts:
            raise ValueError("child_texts must be non-empty")


_CALENDAR_LEVELS = (Level.DAY, Level.WEEK, Level.PROFILE)

_KEY_FUNCS = {
    Level.DAY: (day_key, day_window),
    Level.WEEK: (week_key, week_window),
    Level.PROFILE: (month_key, month_window),
}


@dataclass
class _UserState:
    last_ts: datetime | None = None
    open_session: TemporalGroup | None = None
    # level -> group key -> open group
    open_calendar: dict[Level, dict[str, TemporalGroup]] = field(
        default_factory=lambda: {lvl: {} for lvl in _CALENDAR_LEVELS})
    pending: list[TemporalGroup] = field(default_factory=list)


class Consolidator:
    """Online segment creation plus scheduled multi-level consolidation."""

    def __init__(self, tree: MemoryTree, chat: ChatBackend, embedder: Embedder,
                 prompts: PromptLibrary | None = None,
                 config: EngineConfig | None = None):
        self.tree = tree
        self.chat = chat
        self.embedder = embedder
        self.config = config or EngineConfig()
        self.prompts = prompts or PromptLibrary(self.config.prompt_dir or None)
        if self.config.segment_turns != 1:
            raise ValueError("only single-turn base segments are supported")
        self._state: dict[str, _UserState] = {}

    def state(self, user_id: str) -> _UserState:
        return self._state.setdefault(user_id, _UserState())

    def last_timestamp(self, user_id: str) -> datetime | None:
        return self.state(user_id).last_ts

    # -- public operations -------------------------------------------------

    def ingest_turn(self, user_id: str, turn: DialogTurn) -> list[MemoryNode]:
        """Close any due groups, then create this turn's base segment.

        Returns every node created by the call, closures first. On
        BackendFailure nothing about the turn is recorded; re-ingesting
        the same turn resumes where the failure happened.
        """
        st = self.state(user_id)
        if st.last_ts is not None and turn.timestamp < st.last_ts:
            raise NonMonotonicTimestamp(
                f"turn {turn.turn_id} at {turn.timestamp} precedes {st.last_ts}")
        created = self._drain_pending(user_id)
        if st.open_session is not None and st.open_session.key != turn.session_id:
            created += self._close_session(user_id)
        created += self._close_due_calendar(user_id, turn.timestamp)
        node = self._make_segment(user_id, turn)
        created.append(node)
        self._extend_session(user_id, turn, node)
        st.last_ts = turn.timestamp
        return created

    def flush(self, user_id: str, now: datetime | None = None) -> list[MemoryNode]:
        """Close and consolidate every open group, bottom-up."""
        st = self.state(user_id)
        if now is not None and st.last_ts is not None and now < st.last_ts:
            raise NonMonotonicTimestamp(f"flush time {now} precedes {st.last_ts}")
        created = self._drain_pending(user_id)
        if st.open_session is not None:
            created += self._close_session(user_id)
        for level in _CALENDAR_LEVELS:
            groups = sorted(st.open_calendar[level].values(), key=lambda g: g.anchor)
            for group in groups:
                del st.open_calendar[level][group.key]
                group.open = False
                st.pending.append(group)
                created += self._drain_pending(user_id)
        return created

    def collect_children(self, user_id: str, level: Level | int,
                         group: TemporalGroup) -> list[MemoryNode]:
        """Level-(i-1) nodes whose interval lies inside the group window."""
        level = Level(level)
        below = self.tree.nodes_at_level(user_id, Level(level - 1))
        inside = [n for n in below if group.window.contains(n.interval)]
        inside.sort(key=lambda n: (n.interval.start, n.id))
        return inside

    def history_window(self, user_id: str, level: Level | int,
                       window: int) -> list[MemoryNode]:
        """Up to `window` most recent nodes of a level, newest first."""
        if window < 0:
            raise ValueError("window must be >= 0")
        nodes = self.tree.nodes_at_level(user_id, Level(level))
        nodes.sort(key=lambda n: (n.interval.end, n.id), reverse=True)
        return nodes[:window]

    def consolidate_group(self, user_id: str, group: TemporalGroup) -> MemoryNode | None:
        """Consolidate one closed group into a node; None when empty."""
        if group.open:
            raise ValueError(f"group {group.key} is still open")
        children = [n for n in self.collect_children(user_id, group.level, group)
                    if n.parent_id is None]
        if not children:
            return None
        history = self.history_window(user_id, group.level, self.config.history_window)
        request = ConsolidationRequest(
            level=group.level,
            child_texts=[n.text for n in children],
            history_texts=[n.text for n in history],
            instruction_id=f"l{int(group.level)}",
        )
        text = self._consolidate_text(request)
        embedding = self._embed(text, int(group.level))
        interval = interval_hull([n.interval for n in children])
        node = MemoryNode(
            id=self.tree.allocate_id(user_id),
            user_id=user_id,
            level=group.level,
            interval=interval,
            text=text,
            embedding=embedding,
            created_at=interval.end,
        )
        self.tree.insert_node(node)
        self.tree.adopt(user_id, node.id, [n.id for n in children])
        return node

    # -- internals ----------------------------------------------------------

    def _embed(self, text: str, level: int):
        try:
            return self.embedder.embed_text(text)
        except Exception as exc:
            raise BackendFailure(f"embedding at level {level} failed: {exc}") from exc

    def _consolidate_text(self, request: ConsolidationRequest) -> str:
        history_block = "\n\n".join(request.history_texts) or "(none)"
        children_block = "\n\n".join(request.child_texts)
        prompt = self.prompts.fill(
            f"consolidate_{request.instruction_id}",
            history=history_block,
            child_memories=children_block,
        )
        req = ChatRequest(
            prompt=prompt,
            purpose=CONSOLIDATE_PURPOSES[int(request.level)],
            temperature=self.config.temperature_consolidate,
            max_output=self.config.max_output_tokens,
        )
        try:
            return self.chat.chat_complete(req)
        except Exception as exc:
            raise BackendFailure(f"consolidation at level {int(request.level)} failed: {exc}") from exc

    def _make_segment(self, user_id: str, turn: DialogTurn) -> MemoryNode:
        history = self.history_window(user_id, Level.SEGMENT, self.config.history_window)
        previous = "\n\n".join(n.text for n in history) or "(none)"
        dialogue = f"user: {turn.user_text}\nassistant: {turn.assistant_text}"
        prompt = self.prompts.fill(
            "consolidate_l1", previous_summary=previous, new_dialogue=dialogue)
        req = ChatRequest(
            prompt=prompt,
            purpose=CONSOLIDATE_PURPOSES[1],
            temperature=self.config.temperature_consolidate,
            max_output=self.config.max_output_tokens,
        )
        try:
            text = self.chat.chat_complete(req)
        except Exception as exc:
            raise BackendFailure(f"segment consolidation failed: {exc}") from exc
        embedding = self._embed(text, 1)
        node = MemoryNode(
            id=self.tree.allocate_id(user_id),
            user_id=user_id,
            level=Level.SEGMENT,
            interval=TemporalInterval(turn.timestamp, turn.timestamp),
            text=text,
            embedding=embedding,
            source_turn_ids=[turn.turn_id],
            created_at=turn.timestamp,
        )
        self.tree.insert_node(node)
        return node

    def _extend_session(self, user_id: str, turn: DialogTurn, node: MemoryNode) -> None:
        st = self.state(user_id)
        if st.open_session is None:
            st.open_session = TemporalGroup(
                level=Level.SESSION,
                key=turn.session_id,
                window=TemporalInterval(turn.timestamp, turn.timestamp),
                base_end=turn.timestamp,
                anchor=turn.timestamp,
            )
        else:
            group = st.open_session
            group.window = group.window.hull(node.interval)
            group.base_end = group.window.end
        st.open_session.member_ids.append(node.id)

    def _close_session(self, user_id: str) -> list[MemoryNode]:
        st = self.state(user_id)
        group = st.open_session
        st.open_session = None
        group.open = False
        st.pending.append(group)
        return self._drain_pending(user_id)

    def _drain_pending(self, user_id: str) -> list[MemoryNode]:
        """Consolidate closed groups in closure order; route new nodes up."""
        st = self.state(user_id)
        created = []
        while st.pending:
            group = st.pending[0]
            node = self.consolidate_group(user_id, group)  # BackendFailure keeps it queued
            st.pending.pop(0)
            if node is not None:
                created.append(node)
                if group.level < Level.PROFILE:
                    self._assign_to_upper(user_id, node)
        return created

    def _assign_to_upper(self, user_id: str, node: MemoryNode) -> None:
        st = self.state(user_id)
        upper = Level(node.level + 1)
        key_func, window_func = _KEY_FUNCS[upper]
        key = key_func(node.interval.start)
        group = st.open_calendar[upper].get(key)
        if group is None:
            start, end = window_func(node.interval.start)
            group = TemporalGroup(
                level=upper,
                key=key,
                window=TemporalInterval(start, end),
                base_end=end,
                anchor=node.interval.start,
            )
            st.open_calendar[upper][key] = group
        group.window = group.window.hull(node.interval)
        group.member_ids.append(node.id)

    def _blocked(self, user_id: str, group: TemporalGroup) -> bool:
        """A calendar group must wait for open lower groups anchored in
        its period: their consolidation node would still join it (or a
        group feeding it), and a key must never close twice."""
        st = self.state(user_id)
        key_func = _KEY_FUNCS[group.level][0]
        if st.open_session is not None and key_func(st.open_session.anchor) == group.key:
            return True
        for lower in _CALENDAR_LEVELS:
            if lower >= group.level:
                break
            for other in st.open_calendar[lower].values():
                if key_func(other.anchor) == group.key:
                    return True
        return False

    def _close_due_calendar(self, user_id: str, now: datetime) -> list[MemoryNode]:
        st = self.state(user_id)
        created = []
        for level in _CALENDAR_LEVELS:
            due = [g for g in st.open_calendar[level].values()
                   if g.base_end <= now and not self._blocked(user_id, g)]
            for group in sorted(due, key=lambda g: g.anchor):
                del st.open_calendar[level][group.key]
                group.open = False
                st.pending.append(group)
                created += self._drain_pending(user_id)
        return created

    # -- replay support -------------------------------------------------------

    def restore_state(self, user_id: str, turn_sessions: dict[str, str],
                      last_ts: datetime | None) -> None:
        """Rebuild the open-group scheduler state after a log replay.

        Every node without a parent belongs to a group that had not
        closed when the log was written; group membership is recovered
        from interval starts (and, for segments, the turn's session).
        """
        st = _UserState(last_ts=last_ts)

        by_session: dict[str, list[MemoryNode]] = {}
        for node in self.tree.nodes_at_level(user_id, Level.SEGMENT):
            if node.parent_id is not None:
                continue
            sid = turn_sessions.get(node.source_turn_ids[0]) if node.source_turn_ids else None
            by_session.setdefault(sid or "unknown-session", []).append(node)
        session_groups = []
        for sid, members in by_session.items():
            window = interval_hull([n.interval for n in members])
            session_groups.append(TemporalGroup(
                level=Level.SESSION, key=sid, window=window,
                base_end=window.end, anchor=window.start,
                member_ids=[n.id for n in members]))
        session_groups.sort(key=lambda g: g.anchor)
        if session_groups:
            # only the latest session can still be streaming; earlier
            # unparented sessions were closed-pending when the log ended
            st.open_session = session_groups[-1]
            for group in session_groups[:-1]:
                group.open = False
                st.pending.append(group)

        for upper in _CALENDAR_LEVELS:
            key_func, window_func = _KEY_FUNCS[upper]
            for node in self.tree.nodes_at_level(user_id, Level(upper - 1)):
                if node.parent_id is not None:
                    continue
                key = key_func(node.interval.start)
                group = st.open_calendar[upper].get(key)
                if group is None:
                    start, end = window_func(node.interval.start)
                    group = TemporalGroup(
                        level=upper, key=key,
                        window=TemporalInterval(start, end),
                        base_end=end, anchor=node.interval.start)
                    st.open_calendar[upper][key] = group
                group.window = group.window.hull(node.interval)
                group.member_ids.append(node.id)
        self._state[user_id] = st
