"""Engine configuration: every tunable the consultation pipeline reads.

Defaults follow the values recorded in the project design notes; everything
here can be overridden from a JSON config file (see `EngineConfig.from_file`).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


DEFAULT_OVERALL_INSTRUCTION = (
    "You are a virtual doctor conducting a multi-turn medical consultation. "
    "Ask focused follow-up questions, one at a time, and work toward a "
    "confident differential diagnosis."
)

DEFAULT_TASK_INSTRUCTION = (
    "Follow the attached diagnosis guidelines step by step. Evaluate sensor "
    "data metrics meticulously when they are provided. Track every candidate "
    "disease concurrently and narrow the list as evidence accumulates. "
    "If the sensor data is reliable, rely on it, else please request the "
    "patient to measure these indicators and perform in-lab tests. "
    "End every reply with exactly one action line in the form "
    'ACTION: ASK("question") | ACTION: LAB("test") | '
    'ACTION: SENSOR("query") | ACTION: DIAGNOSE'
)

DEFAULT_SUMMARIZER_INSTRUCTION = (
    "Summarize the following sensor data windows so a clinician can act on "
    "them. Answer the doctor's question directly, cite values, stay factual."
)

# Tag injected into the runtime prompt when retrieved sensor data fails the
# reliability check. Tests assert on this exact string.
UNRELIABLE_SENSOR_TAG = "[SENSOR DATA UNRELIABLE]"


@dataclass(frozen=True)
class ChunkPolicy:
    """Sliding-window chunking parameters, in characters."""

    chunk_size: int = 400
    overlap: int = 100

    def __post_init__(self):
        if self.chunk_size <= 0:
            raise ValueError(f"chunk_size must be positive, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < chunk_size, "
                f"got overlap={self.overlap}, chunk_size={self.chunk_size}"
            )

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass
class EngineConfig:
    """Knobs for retrieval, probability fusion, and the turn loop."""

    # Retrieval
    chunk_policy: ChunkPolicy = field(default_factory=ChunkPolicy)
    medical_similarity_threshold: float = 0.75
    sensor_similarity_threshold: float = 0.15
    medical_top_k: int = 3
    demonstration_top_k: int = 3  # dialogue demonstrations in the preceding prompt
    disease_top_k: int = 3       # candidate diseases kept per mapping run
    # sensor windows are hourly; the default covers a full day so deviant
    # readings inside the queried span cannot be missed by the cutoff
    sensor_top_k: int = 24

    # Sensor uncertainty
    reliability_threshold: float = 0.05
    uncertainty_floor: float = 0.01
    baseline_days: float = 7.0
    min_baseline_records: int = 8

    # Probabilities
    prior_symptom_weight: float = 0.5   # w: prior = w*similarity + (1-w)*demographics
    fusion_alpha: float = 0.3           # final ~ prior^alpha * guideline^(1-alpha)
    fusion_mode: str = "deterministic"  # or "llm"
    pruning_threshold: float = 0.05
    contradiction_floor: float = 0.01   # guideline prob when the tree path is contradicted

    # Turn loop
    max_turns: int = 20
    filter_threshold: float = 0.5
    consent_default: bool = True

    # Prompt text (documented config, not claimed verbatim from anywhere)
    overall_instruction: str = DEFAULT_OVERALL_INSTRUCTION
    task_instruction: str = DEFAULT_TASK_INSTRUCTION
    summarizer_instruction: str = DEFAULT_SUMMARIZER_INSTRUCTION

    # Free-text symptom phrases mapped to finding keys, e.g.
    # {"burning_stomach": ["burning stomach", "stomach burns"]}
    symptom_aliases: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["chunk_policy"] = {"chunk_size": self.chunk_policy.chunk_size,
                             "overlap": self.chunk_policy.overlap}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EngineConfig":
        d = dict(d)
        if "chunk_policy" in d and isinstance(d["chunk_policy"], dict):
            d["chunk_policy"] = ChunkPolicy(**d["chunk_policy"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
