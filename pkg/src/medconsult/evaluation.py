"""Transcript scoring, retrieval-rate computation, and batch simulation.

Scoring follows a three-dimension rubric (compliance, sensor-data
utilization, accuracy) judged by a pluggable chat provider; the overall
score is always the local arithmetic mean of the three, never taken from
the judge's text. Synthetic patients drive whole sessions from an answer
script so batch runs need no human in the loop.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .consultation import ActionKind, ConsultationEngine, Demographics
from .gateway import Gateway
from .guidelines import GuidelineTree, serialize_guideline

SCORE_DIMENSIONS = ("compliance", "sensor_utilization", "accuracy")


class EvaluationError(Exception):
    pass


@dataclass
class GptScore:
    compliance: float
    sensor_utilization: float
    accuracy: float
    explanations: dict[str, str] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return (self.compliance + self.sensor_utilization + self.accuracy) / 3.0

    def __post_init__(self):
        for name in SCORE_DIMENSIONS:
            value = getattr(self, name)
            if not 0.0 <= value <= 10.0:
                raise ValueError(f"{name} score {value} outside [0, 10]")

    def to_dict(self) -> dict:
        return {"compliance": self.compliance,
                "sensor_utilization": self.sensor_utilization,
                "accuracy": self.accuracy,
                "overall": self.overall,
                "explanations": self.explanations}


_DIM_RE = {
    "compliance": re.compile(r"compliance:\s*(\d+(?:\.\d+)?)\s*/\s*10", re.I),
    "sensor_utilization": re.compile(
        r"sensor[_ ]utili[sz]ation:\s*(\d+(?:\.\d+)?)\s*/\s*10", re.I),
    "accuracy": re.compile(r"accuracy:\s*(\d+(?:\.\d+)?)\s*/\s*10", re.I),
}
_EXPL_RE = re.compile(r"explanation:\s*(.+)")


def _render_dialogue(transcript: dict) -> str:
    lines = []
    for turn in transcript.get("turns", []):
        lines.append(f"{turn['role']}: {turn['text']}")
    return "\n".join(lines)


def build_judge_prompt(transcript: dict, ground_truth_disease: str,
                       guideline: Optional[GuidelineTree]) -> str:
    guideline_text = serialize_guideline(guideline) if guideline else "(none)"
    return (
        "Score the following diagnostic dialogue on three criteria, each "
        "0-10:\n"
        "- compliance: adherence to the diagnosis guideline during the "
        "consultation\n"
        "- sensor_utilization: how much sensor-data knowledge contributed "
        "to the process\n"
        "- accuracy: consistency between the final diagnosis and the ground "
        "truth label\n"
        "Reply with one 'name: X/10' line per criterion, each followed by "
        "an 'explanation: ...' line.\n\n"
        f"Dialogue:\n{_render_dialogue(transcript)}\n\n"
        f"Ground truth disease: {ground_truth_disease}\n\n"
        f"Disease guideline:\n{guideline_text}"
    )


def _parse_judge_reply(reply: str) -> Optional[GptScore]:
    values = {}
    for name, pattern in _DIM_RE.items():
        m = pattern.search(reply)
        if not m:
            return None
        values[name] = float(m.group(1))
    explanations = {}
    found = _EXPL_RE.findall(reply)
    for name, text in zip(SCORE_DIMENSIONS, found):
        explanations[name] = text.strip()
    return GptScore(explanations=explanations, **values)


def score_dialogue(transcript: dict, ground_truth_disease: str,
                   guideline: Optional[GuidelineTree],
                   judge: Gateway) -> GptScore:
    """Judge one transcript; the overall score is computed locally.

    An unparseable judge reply earns exactly one re-prompt before failing.
    """
    prompt = build_judge_prompt(transcript, ground_truth_disease, guideline)
    reply = judge.simple_chat("doctor", "You are a strict medical evaluator.",
                              prompt)
    score = _parse_judge_reply(reply)
    if score is None:
        reply = judge.simple_chat(
            "doctor", "You are a strict medical evaluator.",
            prompt + "\n\nYour previous reply was unparseable. Use exactly "
                     "the 'name: X/10' format for all three criteria.")
        score = _parse_judge_reply(reply)
    if score is None:
        raise EvaluationError(f"judge reply unparseable after retry: {reply[:200]}")
    return score


def retrieval_rate(transcript: dict) -> float:
    """Sensor retrievals performed divided by total doctor turns."""
    doctor_turns = sum(1 for t in transcript.get("turns", [])
                       if t["role"] == "doctor")
    if doctor_turns == 0:
        raise EvaluationError("transcript has no doctor turns")
    performed = sum(1 for e in transcript.get("retrieval_log", [])
                    if e.get("retrieval_performed"))
    return performed / doctor_turns


# ---------------------------------------------------------------------------
# Synthetic patients
# ---------------------------------------------------------------------------

@dataclass
class SyntheticPatient:
    """One scripted patient: an opening complaint, per-finding answers, and
    keys the script deliberately withholds (forcing the sensor path)."""

    profile_id: str
    ground_truth: str
    opening: str
    answers: dict[str, str]  # token (lowercase) -> scripted reply
    withheld: list[str] = field(default_factory=list)
    patient_id: str = "p1"
    demographics: Optional[dict] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticPatient":
        return cls(profile_id=raw["profile_id"], ground_truth=raw["ground_truth"],
                   opening=raw["opening"], answers=dict(raw.get("answers", {})),
                   withheld=list(raw.get("withheld", [])),
                   patient_id=raw.get("patient_id", "p1"),
                   demographics=raw.get("demographics"))

    @classmethod
    def load_jsonl(cls, path) -> list["SyntheticPatient"]:
        patients = []
        for line in open(path, encoding="utf-8"):
            line = line.strip()
            if line:
                patients.append(cls.from_dict(json.loads(line)))
        return patients


def _scripted_reply(patient: SyntheticPatient, action_kind: ActionKind,
                    argument: str) -> str:
    lowered = argument.lower()
    for token in patient.withheld:
        if token in lowered:
            return "I'm not sure."
    for token, reply in patient.answers.items():
        if token in lowered:
            return reply
    if action_kind is ActionKind.REQUEST_INLAB_TEST:
        return "I'm not sure."
    if action_kind is ActionKind.ACCESS_SENSOR_DATA:
        return "Okay."
    return "No."


def simulate_patient(patient: SyntheticPatient,
                     engine: ConsultationEngine) -> dict:
    """Drive one full session from the patient's script.

    Doctor questions are answered by token match against the script;
    withheld findings earn "I'm not sure", pushing the doctor toward the
    sensor store. Ends on a diagnosis summary or the engine's turn cap;
    if the script runs dry first the transcript is marked truncated.
    """
    session = engine.begin_session(
        patient.opening,
        demographics=Demographics.from_dict(patient.demographics),
        patient_id=patient.patient_id)
    result = engine.step(session, None)
    while session.phase != "concluded":
        reply = _scripted_reply(patient, ActionKind(result.action.kind),
                                result.action.argument or result.doctor_msg)
        result = engine.step(session, reply)
    truncated = bool(session.final_report and session.final_report.forced)
    transcript = session.export_transcript()
    transcript["profile_id"] = patient.profile_id
    transcript["ground_truth"] = patient.ground_truth
    transcript["truncated"] = truncated
    return transcript
