"""Provider abstraction for chat and embedding calls.

Two implementations per interface: deterministic mocks (pure functions
of their inputs, for offline tests and benchmarks) and HTTP clients
speaking chat-completions / embeddings style JSON.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

import requests

from .errors import ProviderError, ProviderTimeout, RateLimited
from .indexing import tokenize


class Purpose(str, Enum):
    CONSOLIDATE_L1 = "consolidate_l1"
    CONSOLIDATE_L2 = "consolidate_l2"
    CONSOLIDATE_L3 = "consolidate_l3"
    CONSOLIDATE_L4 = "consolidate_l4"
    CONSOLIDATE_L5 = "consolidate_l5"
    PLAN = "plan"
    GATE = "gate"


CONSOLIDATE_PURPOSES = {
    1: Purpose.CONSOLIDATE_L1,
    2: Purpose.CONSOLIDATE_L2,
    3: Purpose.CONSOLIDATE_L3,
    4: Purpose.CONSOLIDATE_L4,
    5: Purpose.CONSOLIDATE_L5,
}


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    purpose: Purpose
    temperature: float = 0.0
    max_output: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


class ChatBackend(Protocol):
    def chat_complete(self, req: ChatRequest) -> str: ...


class Embedder(Protocol):
    dimension: int

    def embed_text(self, text: str) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# deterministic mocks
# ---------------------------------------------------------------------------

# Small fixed stopword list used by the mock planner/gate keyword rule.
STOPWORDS = frozenset("""
a about an and are as assistant at be been but by can could did do does doing
for from had has have he her here hers him his how i if in into is it its last
me mine more most my of on or our ours she should so some than that the their
theirs them then there these they this those to user was we were what when
where which who whom why will with would you your yours
""".split())

# Fixed first-name table; name tokens never become keywords.
NAME_TOKENS = frozenset("""
alice bob carol dave erin frank grace heidi ivan judy kevin laura mallory niaj
olivia peggy quentin rupert sybil trent uma victor wendy xavier yolanda zoe
""".split())

# Ordered complexity rules: deep-reasoning patterns, then multi-fact
# aggregation patterns, then single-fact interrogatives; default hybrid.
_DEEP_PATTERNS = re.compile(
    r"\b(would|might|could|should|enjoy|prefer\w*|suitable|suits?|"
    r"interested|personality|traits?|likely|recommend\w*|predict\w*|"
    r"hypothetical\w*|imagine|favorite|prioriti\w*|habits?|extrovert\w*|"
    r"introvert\w*|opinions?|values)\b"
)
_AGGREGATE_PATTERNS = re.compile(
    r"\b(activities|topics|how many|where has|list|summar\w*|compare|"
    r"enumerate|overall|every)\b"
)
_SIMPLE_LEAD = re.compile(r"^(where|when|who|whom|which|what|how)\b")

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")

# Speaker-aware first/second-person rewrite tables (token-level).
_USER_PRONOUNS = {
    "i": "the user", "i'm": "the user is", "i've": "the user has",
    "i'll": "the user will", "i'd": "the user would", "me": "the user",
    "my": "the user's", "mine": "the user's", "myself": "themselves",
    "we": "they", "we're": "they are", "our": "their", "ours": "theirs",
    "am": "is", "you": "the assistant", "you're": "the assistant is",
    "your": "the assistant's", "yours": "the assistant's",
}
_ASSISTANT_PRONOUNS = {
    "i": "the assistant", "i'm": "the assistant is", "i've": "the assistant has",
    "i'll": "the assistant will", "i'd": "the assistant would", "me": "the assistant",
    "my": "the assistant's", "mine": "the assistant's", "myself": "themselves",
    "we": "they", "we're": "they are", "our": "their", "ours": "theirs",
    "am": "is", "you": "the user", "you're": "the user is",
    "your": "the user's", "yours": "the user's",
}

_WORD_RE = re.compile(r"[A-Za-z']+")


def extract_keywords(question: str, limit: int = 3) -> list[str]:
    """Top-`limit` TF keywords, stopwords and name tokens excluded.

    Order: term frequency descending, then alphabetical. Single-letter
    tokens are dropped (they are placeholders or noise).
    """
    counts: dict[str, int] = {}
    for tok in tokenize(question):
        if len(tok) < 2 or tok in STOPWORDS or tok in NAME_TOKENS:
            continue
        counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:limit]]


def classify_question(question: str) -> int:
    """Rule-table complexity: 0 simple, 1 hybrid, 2 complex."""
    q = question.lower().strip()
    if _DEEP_PATTERNS.search(q):
        return 2
    if _AGGREGATE_PATTERNS.search(q):
        return 1
    if _SIMPLE_LEAD.match(q):
        return 0
    return 1


def _rewrite_person(sentence: str, table: dict[str, str]) -> str:
    def repl(m: re.Match) -> str:
        word = m.group(0)
        return table.get(word.lower(), word)

    out = _WORD_RE.sub(repl, sentence).strip()
    if out and out[0].islower():
        out = out[0].upper() + out[1:]
    return out


def _split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text.strip()) if s.strip()]


def _section(prompt: str, start_marker: str, end_marker: str | None) -> str:
    start = prompt.rfind(start_marker)
    if start < 0:
        return ""
    start += len(start_marker)
    if end_marker is None:
        return prompt[start:]
    end = prompt.find(end_marker, start)
    return prompt[start:end] if end >= 0 else prompt[start:]


def _last_question(prompt: str) -> str:
    matches = re.findall(r"^Question:\s*(.+)$", prompt, flags=re.MULTILINE)
    return matches[-1].strip() if matches else ""


def _mock_consolidate(req: ChatRequest) -> str:
    """Extractive merge: sentences of the children, third person, in
    order, deduplicated, minus any sentence already in the history."""
    if req.purpose == Purpose.CONSOLIDATE_L1:
        history = _section(req.prompt, "Historical memories (do not repeat):",
                           "- Current conversation:")
        dialogue = _section(req.prompt, "Current conversation:",
                            "\n\nPlease generate")
        sentences: list[str] = []
        for line in dialogue.strip().splitlines():
            line = line.strip()
            if not line:
                continue
            lowered = line.lower()
            if lowered.startswith("user:"):
                body, table = line[5:], _USER_PRONOUNS
            elif lowered.startswith("assistant:"):
                body, table = line[10:], _ASSISTANT_PRONOUNS
            else:
                body, table = line, _USER_PRONOUNS
            for sent in _split_sentences(body):
                sentences.append(_rewrite_person(sent, table))
    else:
        history = _section(req.prompt, "do not repeat):", "\n\nChild memories:")
        children = _section(req.prompt, "Child memories:",
                            "\n\nWrite the consolidated memory now.")
        sentences = _split_sentences(children)

    seen = set(_split_sentences(history))
    merged = []
    for sent in sentences:
        if sent and sent not in seen:
            merged.append(sent)
            seen.add(sent)
    if not merged:
        return "The exchange added no new substantive facts."
    return " ".join(merged)


def _mock_plan(req: ChatRequest) -> str:
    question = _last_question(req.prompt)
    return json.dumps({
        "complexity": classify_question(question),
        "keywords": extract_keywords(question),
    })


_CANDIDATE_RE = re.compile(r"^\s*(\d+)\.\s+(.*)$", flags=re.MULTILINE)
_GATE_CAPS = {0: 8, 1: 15, 2: 25}


def _mock_gate(req: ChatRequest) -> str:
    question = _last_question(req.prompt)
    keywords = set(extract_keywords(question))
    m = re.search(r"\(Complexity (\d)\)", req.prompt)
    cap = _GATE_CAPS.get(int(m.group(1)) if m else 1, 15)
    # numbered rule lines precede the candidate list; parse only the list
    listing = _section(req.prompt, "Candidate memories", "Return IDs to keep")
    matches: list[tuple[int, int]] = []  # (-overlap, ordinal)
    for ordinal, text in _CANDIDATE_RE.findall(listing):
        overlap = len(keywords & set(tokenize(text)))
        if overlap:
            matches.append((-overlap, int(ordinal)))
    matches.sort()
    kept = sorted(ordinal for _, ordinal in matches[:cap])
    return json.dumps({"relevant_ids": kept})


def mock_dispatch(req: ChatRequest) -> str:
    """Route a request to the deterministic rule for its purpose."""
    if req.purpose in (Purpose.PLAN,):
        return _mock_plan(req)
    if req.purpose == Purpose.GATE:
        return _mock_gate(req)
    return _mock_consolidate(req)


class MockChatBackend:
    """Deterministic chat provider; records every request it serves."""

    def __init__(self):
        self.calls: list[ChatRequest] = []

    def chat_complete(self, req: ChatRequest) -> str:
        self.calls.append(req)
        return mock_dispatch(req)


class FlakyChatBackend:
    """Mock wrapper that fails the first `failures` calls (retry tests)."""

    def __init__(self, failures: int = 1):
        self.inner = MockChatBackend()
        self.remaining_failures = failures

    def chat_complete(self, req: ChatRequest) -> str:
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise ProviderError("simulated transient failure")
        return self.inner.chat_complete(req)


class RoutingChatBackend:
    """Dispatches each request to a purpose-specific backend.

    Lets deployments mix providers, e.g. a real model for consolidation
    with the mock planner and gate (or the reverse) behind one handle.
    """

    def __init__(self, default: ChatBackend,
                 overrides: dict[Purpose, ChatBackend] | None = None):
        self.default = default
        self.overrides = dict(overrides or {})

    def chat_complete(self, req: ChatRequest) -> str:
        backend = self.overrides.get(req.purpose, self.default)
        return backend.chat_complete(req)


def _stable_bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class MockEmbedder:
    """Feature-hashing embedder: token counts over hashed buckets."""

    def __init__(self, dimension: int = 1024):
        self.dimension = dimension

    def bucket(self, token: str) -> int:
        return _stable_bucket(token, self.dimension)

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        tokens = tokenize(text)
        if not tokens:
            vec[0] = 1.0
            return vec.astype(np.float32)
        for tok in tokens:
            vec[self.bucket(tok)] += 1.0
        vec /= np.linalg.norm(vec)
        return vec.astype(np.float32)


# ---------------------------------------------------------------------------
# HTTP providers
# ---------------------------------------------------------------------------

API_KEY_ENV = "TIMEM_API_KEY"
_RETRIABLE_STATUS = {429, 500, 502, 503, 504}


class _HttpBase:
    def __init__(self, endpoint: str, model: str, timeout: float = 30.0,
                 max_retries: int = 3, max_concurrency: int = 4,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self._gate = threading.Semaphore(max_concurrency)
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last_status = None
        with self._gate:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    time.sleep(0.25 * 2 ** (attempt - 1))
                try:
                    resp = self._session.post(
                        self.endpoint, json=payload,
                        headers=self._headers(), timeout=self.timeout)
                except requests.Timeout:
                    last_status = "timeout"
                    continue
                except requests.RequestException as exc:
                    raise ProviderError(f"request failed: {exc}") from exc
                if resp.status_code == 200:
                    return resp.json()
                last_status = resp.status_code
                if resp.status_code not in _RETRIABLE_STATUS:
                    raise ProviderError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        if last_status == "timeout":
            raise ProviderTimeout(f"no response after {self.max_retries} retries")
        if last_status == 429:
            raise RateLimited(f"still rate limited after {self.max_retries} retries")
        raise ProviderError(f"provider returned {last_status} after {self.max_retries} retries")


class HttpChatBackend(_HttpBase):
    """Chat-completions style client with bounded retry on transient errors."""

    def chat_complete(self, req: ChatRequest) -> str:
        data = self._post({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output,
        })
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc}") from exc


class HttpEmbedder(_HttpBase):
    """Embeddings endpoint client; output is re-normalized to unit length."""

    def __init__(self, endpoint: str, model: str, dimension: int = 1024, **kwargs):
        super().__init__(endpoint, model, **kwargs)
        self.dimension = dimension

    def embed_text(self, text: str) -> np.ndarray:
        data = self._post({"model": self.model, "input": text})
        try:
            values = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        if values.shape != (self.dimension,):
            raise ProviderError(
                f"embedding dimension {values.shape} != ({self.dimension},)")
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            raise ProviderError("provider returned a zero embedding")
        return (values / norm).astype(np.float32)
