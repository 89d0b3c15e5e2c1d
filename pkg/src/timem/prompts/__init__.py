"""Prompt template loading and filling.

Templates ship as package data next to this module; a prompt directory
configured at runtime overrides any file of the same name. Filling uses
literal placeholder replacement because several templates contain JSON
braces that str.format would choke on.
"""

from __future__ import annotations

from pathlib import Path

_PACKAGED = Path(__file__).parent

TEMPLATE_NAMES = (
    "consolidate_l1", "consolidate_l2", "consolidate_l3",
    "consolidate_l4", "consolidate_l5",
    "planner", "gate_simple", "gate_hybrid", "gate_complex",
)


class PromptLibrary:
    def __init__(self, prompt_dir: str | Path | None = None):
        self._override = Path(prompt_dir) if prompt_dir else None
        self._cache: dict[str, str] = {}

    def template(self, name: str) -> str:
        if name not in TEMPLATE_NAMES:
            raise KeyError(f"unknown prompt template: {name}")
        if name not in self._cache:
            path = _PACKAGED / f"{name}.txt"
            if self._override is not None:
                candidate = self._override / f"{name}.txt"
                if candidate.exists():
                    path = candidate
            self._cache[name] = path.read_text(encoding="utf-8")
        return self._cache[name]

    def fill(self, name: str, **values: str) -> str:
        text = self.template(name)
        for key, value in values.items():
            text = text.replace("{" + key + "}", value)
        return text
