"""Engine configuration.

All tunables live here as flat key-value pairs so a config file can
override any of them without code changes. Defaults mirror the recall
and consolidation constants the engine was calibrated with.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

# Per-complexity ancestor budgets, keyed "cap_<complexity>_l<level>".
DEFAULT_CAPS = {
    "cap_simple_l1": 20,
    "cap_simple_l2": 4,
    "cap_simple_l5": 1,
    "cap_hybrid_l1": 20,
    "cap_hybrid_l2": 4,
    "cap_hybrid_l3": 2,
    "cap_hybrid_l5": 1,
    "cap_complex_l1": 20,
    "cap_complex_l2": 8,
    "cap_complex_l3": 4,
    "cap_complex_l4": 2,
    "cap_complex_l5": 1,
}


@dataclass
class EngineConfig:
    # scoring
    fusion_weight: float = 0.9          # weight of the semantic channel
    leaf_budget: int = 20               # top-k leaves activated per query
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    # consolidation
    history_window: int = 3             # same-level history per consolidation
    segment_turns: int = 1              # dialog turns per base segment
    level_count: int = 5
    profile_period: str = "month"       # calendar period of profile updates
    # embeddings
    embedding_dim: int = 1024
    # providers
    chat_endpoint: str = "http://localhost:8000/v1/chat/completions"
    embed_endpoint: str = "http://localhost:8000/v1/embeddings"
    chat_model: str = "default-chat"
    embed_model: str = "default-embed"
    request_timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4
    temperature_consolidate: float = 0.7
    temperature_plan: float = 0.0
    temperature_gate: float = 0.0
    max_output_tokens: int = 512
    # misc
    prompt_dir: str = ""                # empty = packaged prompt templates
    caps: dict = field(default_factory=lambda: dict(DEFAULT_CAPS))

    def to_dict(self) -> dict:
        d = asdict(self)
        caps = d.pop("caps")
        d.update(caps)  # flatten: cap_* keys live at top level
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)} - {"caps"}
        kwargs = {}
        caps = dict(DEFAULT_CAPS)
        for key, value in data.items():
            if key.startswith("cap_"):
                if key not in DEFAULT_CAPS:
                    raise KeyError(f"unknown budget key: {key}")
                caps[key] = int(value)
            elif key in known:
                kwargs[key] = value
            else:
                raise KeyError(f"unknown config key: {key}")
        return cls(caps=caps, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def dump(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def level_caps(self, complexity: str) -> dict[int, int]:
        """Budget map {level: max count} for one complexity label."""
        prefix = f"cap_{complexity}_l"
        return {
            int(key[len(prefix):]): value
            for key, value in self.caps.items()
            if key.startswith(prefix)
        }
