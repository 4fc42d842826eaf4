"""The consultation turn loop.

Each doctor turn: retrieve medical knowledge for the current symptoms,
refresh the candidate guideline trees, rebuild the runtime prompt (carrying
the previous turn's sensor knowledge), call the doctor LLM, parse its action,
run the sensor pipeline when asked, fold new findings into every candidate's
guideline cursor, and re-fuse the candidate probabilities.

The preceding prompt is built once per session and never changes; the
runtime prompt is rebuilt every turn from exactly four parts: current
symptoms, retrieved medical knowledge, updated guidelines, and the previous
turn's sensor knowledge.
"""

from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .config import UNRELIABLE_SENSOR_TAG, EngineConfig
from .gateway import ChatMessage, ChatRequest, Gateway, GatewayError
from .guidelines import (
    DiseaseCandidateSeed,
    Finding,
    GuidelineLibrary,
    OutcomeKind,
    StepOutcome,
    SymptomDiseaseTable,
    TreeCursor,
    UnitMismatchError,
    evaluate_step,
    serialize_guideline,
)
from .sensors import (
    METRIC_LABELS,
    METRIC_SPECS,
    DoctorQuery,
    FilterDecision,
    FilterModel,
    SensorIndex,
    SensorStore,
    should_retrieve,
    summarize_sensor,
)
from .vector_store import VectorStore

log = logging.getLogger("medconsult.consultation")


class ConsultationError(Exception):
    pass


class SessionConcludedError(ConsultationError):
    pass


class MalformedActionError(ConsultationError):
    pass


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------

class ActionKind(str, Enum):
    INQUIRE_SYMPTOM = "inquire_symptom"
    REQUEST_INLAB_TEST = "request_inlab_test"
    ACCESS_SENSOR_DATA = "access_sensor_data"
    SUMMARIZE_DIAGNOSIS = "summarize_diagnosis"


_ACTION_WORDS = {"ASK": ActionKind.INQUIRE_SYMPTOM,
                 "LAB": ActionKind.REQUEST_INLAB_TEST,
                 "SENSOR": ActionKind.ACCESS_SENSOR_DATA,
                 "DIAGNOSE": ActionKind.SUMMARIZE_DIAGNOSIS}

_ACTION_RE = re.compile(
    r"ACTION:\s*(ASK|LAB|SENSOR|DIAGNOSE)\b(?:\s*\(\s*\"(.*?)\"\s*\))?",
    re.IGNORECASE | re.DOTALL)


@dataclass
class Action:
    kind: ActionKind
    argument: str
    raw_text: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "argument": self.argument}


def parse_action(text: str) -> Optional[Action]:
    """Extract the doctor's action from a reply.

    Primary protocol: a machine-readable ACTION line (last one wins).
    Fallback: keyword heuristics, so slightly off-protocol replies still
    map onto the four-action space. Returns None when nothing matches.
    """
    matches = list(_ACTION_RE.finditer(text))
    if matches:
        word, arg = matches[-1].group(1).upper(), matches[-1].group(2) or ""
        return Action(kind=_ACTION_WORDS[word], argument=arg.strip(), raw_text=text)

    lowered = text.lower()
    if any(kw in lowered for kw in ("final diagnosis", "diagnosis summary",
                                    "summarize the diagnosis")):
        return Action(ActionKind.SUMMARIZE_DIAGNOSIS, "", text)
    if any(kw in lowered for kw in ("sensor data", "smartwatch", "wearable",
                                    "your device recorded")):
        return Action(ActionKind.ACCESS_SENSOR_DATA, text.strip(), text)
    if any(kw in lowered for kw in ("in-lab", "lab test", "laboratory",
                                    "x-ray", "blood test")):
        return Action(ActionKind.REQUEST_INLAB_TEST, text.strip(), text)
    if "?" in text:
        question = text[:text.index("?") + 1].strip().splitlines()[-1]
        return Action(ActionKind.INQUIRE_SYMPTOM, question, text)
    return None


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------

@dataclass
class PrecedingPrompt:
    overall_instruction: str
    task_instruction: str
    guideline_texts: list[str]
    demonstrations: list[str]

    def render(self) -> str:
        parts = ["== OVERALL INSTRUCTION ==", self.overall_instruction,
                 "== TASK INSTRUCTION ==", self.task_instruction,
                 "== DIAGNOSIS GUIDELINES =="]
        parts.extend(self.guideline_texts or ["(none retrieved)"])
        parts.append("== DIALOGUE DEMONSTRATIONS ==")
        parts.extend(self.demonstrations or ["(none retrieved)"])
        return "\n".join(parts)


@dataclass
class RuntimePrompt:
    symptoms: str
    med_knowledge: list[str]
    guidelines: list[str]
    sensor_knowledge: Optional[str]  # rendered text incl. reliability tag, or None

    def render(self) -> str:
        parts = ["== PATIENT SYMPTOMS (CURRENT TURN) ==", self.symptoms,
                 "== RETRIEVED MEDICAL KNOWLEDGE =="]
        parts.extend(self.med_knowledge or ["(none)"])
        parts.append("== CANDIDATE GUIDELINES (UPDATED) ==")
        parts.extend(self.guidelines or ["(none)"])
        parts.append("== SENSOR DATA KNOWLEDGE (PREVIOUS TURN) ==")
        parts.append(self.sensor_knowledge or "(none)")
        return "\n".join(parts)


@dataclass
class PromptBundle:
    preceding: PrecedingPrompt
    runtime: Optional[RuntimePrompt] = None


# ---------------------------------------------------------------------------
# Candidates and session state
# ---------------------------------------------------------------------------

@dataclass
class Demographics:
    age_band: Optional[str] = None
    sex: Optional[str] = None
    region: Optional[str] = None

    def to_dict(self) -> dict:
        return {"age_band": self.age_band, "sex": self.sex, "region": self.region}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Demographics":
        d = d or {}
        return cls(age_band=d.get("age_band"), sex=d.get("sex"),
                   region=d.get("region"))


class IncidenceTable:
    """Disease incidence rates by demographic band; wildcard fields match
    anything, the most specific record wins."""

    def __init__(self, records: Sequence[dict]):
        self.records = list(records)

    @classmethod
    def load(cls, path: str | Path) -> "IncidenceTable":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def rate(self, disease: str, demographics: Demographics) -> Optional[float]:
        best, best_score = None, -1
        for rec in self.records:
            if rec["disease"] != disease:
                continue
            score = 0
            ok = True
            for field_name in ("age_band", "sex", "region"):
                want = rec.get(field_name)
                if want is None:
                    continue
                if getattr(demographics, field_name) == want:
                    score += 1
                else:
                    ok = False
                    break
            if ok and score > best_score:
                best, best_score = rec["rate"], score
        return best


@dataclass
class CandidateDisease:
    disease: str
    symptom_similarity: float
    demographics_prob: float
    prior_prob: float
    guideline_prob: float
    final_prob: float = 0.0
    cursor: Optional[TreeCursor] = None
    explanation: str = ""
    narrowed: bool = False
    last_outcome: Optional[StepOutcome] = None

    def snapshot(self) -> dict:
        return {"disease": self.disease,
                "symptom_similarity": round(self.symptom_similarity, 6),
                "demographics_prob": round(self.demographics_prob, 6),
                "prior_prob": round(self.prior_prob, 6),
                "guideline_prob": round(self.guideline_prob, 6),
                "final_prob": round(self.final_prob, 6),
                "narrowed": self.narrowed,
                "explanation": self.explanation}


@dataclass
class RetrievalLogEntry:
    turn: int
    filter_decision: Optional[bool]
    filter_score: Optional[float]
    retrieval_performed: bool
    min_uncertainty: Optional[float]
    reliable: Optional[bool]
    consent: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TranscriptTurn:
    turn: int
    role: str  # patient | doctor
    text: str
    action: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {"turn": self.turn, "role": self.role, "text": self.text}
        if self.action is not None:
            d["action"] = self.action
        return d


@dataclass
class TurnResult:
    turn: int
    doctor_msg: str
    action: Action
    candidates: list[dict]
    retrieval_info: dict
    phase: str

    def to_dict(self) -> dict:
        return {"turn": self.turn, "doctor_msg": self.doctor_msg,
                "action": self.action.to_dict(), "candidates": self.candidates,
                "retrieval_info": self.retrieval_info, "phase": self.phase}


@dataclass
class DiagnosisReport:
    ranked: list[dict]  # {disease, probability, explanation}
    forced: bool = False

    def to_dict(self) -> dict:
        return {"ranked": self.ranked, "forced": self.forced}


class SessionState:
    """Everything one consultation accumulates across turns."""

    def __init__(self, session_id: str, patient_id: str,
                 demographics: Demographics):
        self.session_id = session_id
        self.patient_id = patient_id
        self.demographics = demographics
        self.phase = "preceding"  # preceding | consulting | concluded
        self.turn = 0  # completed doctor turns
        self.transcript: list[TranscriptTurn] = []
        self.symptom_statements: list[str] = []
        self.findings: dict[str, Finding] = {}
        self.candidates: list[CandidateDisease] = []
        self.narrowed: set[str] = set()
        self.preceding: Optional[PrecedingPrompt] = None
        self.preceding_rendered: str = ""
        self.last_runtime: Optional[RuntimePrompt] = None
        self.sensor_knowledge = None  # SensorKnowledge from the previous turn
        self.retrieval_log: list[RetrievalLogEntry] = []
        self.trajectory: list[dict] = []
        self.pending_need: Optional[tuple[str, str]] = None  # (kind, key)
        self.pending_lab: Optional[str] = None
        self.final_report: Optional[DiagnosisReport] = None

    def active_candidates(self) -> list[CandidateDisease]:
        return [c for c in self.candidates if not c.narrowed]

    @property
    def prompt_bundle(self) -> PromptBundle:
        return PromptBundle(preceding=self.preceding, runtime=self.last_runtime)

    def to_state_dict(self) -> dict:
        """Full state for durable persistence (superset of the export)."""
        candidates = []
        for c in self.candidates:
            cursor = None
            if c.cursor is not None:
                cursor = {"node_id": c.cursor.node_id, "path": list(c.cursor.path),
                          "satisfied_evidence": c.cursor.satisfied_evidence,
                          "concluded": c.cursor.concluded}
            candidates.append({
                "disease": c.disease, "symptom_similarity": c.symptom_similarity,
                "demographics_prob": c.demographics_prob,
                "prior_prob": c.prior_prob, "guideline_prob": c.guideline_prob,
                "final_prob": c.final_prob, "narrowed": c.narrowed,
                "explanation": c.explanation, "cursor": cursor})
        sensor = None
        if self.sensor_knowledge is not None:
            k = self.sensor_knowledge
            sensor = {"summary": k.summary, "covered_metrics": k.covered_metrics,
                      "min_uncertainty": k.min_uncertainty, "reliable": k.reliable,
                      "record_ids": k.record_ids}
        return {
            "session_id": self.session_id,
            "patient_id": self.patient_id,
            "demographics": self.demographics.to_dict(),
            "phase": self.phase,
            "turn": self.turn,
            "transcript": [t.to_dict() for t in self.transcript],
            "symptom_statements": list(self.symptom_statements),
            "findings": {k: {"value": f.value, "units": f.units,
                             "provenance": f.provenance}
                         for k, f in self.findings.items()},
            "candidates": candidates,
            "narrowed": sorted(self.narrowed),
            "preceding": None if self.preceding is None else {
                "overall_instruction": self.preceding.overall_instruction,
                "task_instruction": self.preceding.task_instruction,
                "guideline_texts": self.preceding.guideline_texts,
                "demonstrations": self.preceding.demonstrations},
            "sensor_knowledge": sensor,
            "retrieval_log": [e.to_dict() for e in self.retrieval_log],
            "trajectory": self.trajectory,
            "pending_need": list(self.pending_need) if self.pending_need else None,
            "pending_lab": self.pending_lab,
            "final_report": self.final_report.to_dict() if self.final_report else None,
        }

    @classmethod
    def from_state_dict(cls, data: dict, library: GuidelineLibrary) -> "SessionState":
        from .sensors import SensorKnowledge

        session = cls(session_id=data["session_id"], patient_id=data["patient_id"],
                      demographics=Demographics.from_dict(data["demographics"]))
        session.phase = data["phase"]
        session.turn = data["turn"]
        session.transcript = [
            TranscriptTurn(turn=t["turn"], role=t["role"], text=t["text"],
                           action=t.get("action"))
            for t in data["transcript"]]
        session.symptom_statements = list(data["symptom_statements"])
        session.findings = {
            k: Finding(value=f["value"], units=f.get("units"),
                       provenance=f.get("provenance", "patient-stated"))
            for k, f in data["findings"].items()}
        for c in data["candidates"]:
            cursor = None
            tree = library.get(c["disease"])
            if c.get("cursor") is not None and tree is not None:
                cursor = TreeCursor(tree=tree, node_id=c["cursor"]["node_id"],
                                    path=list(c["cursor"]["path"]),
                                    satisfied_evidence=c["cursor"]["satisfied_evidence"],
                                    concluded=c["cursor"]["concluded"])
            session.candidates.append(CandidateDisease(
                disease=c["disease"], symptom_similarity=c["symptom_similarity"],
                demographics_prob=c["demographics_prob"],
                prior_prob=c["prior_prob"], guideline_prob=c["guideline_prob"],
                final_prob=c["final_prob"], narrowed=c["narrowed"],
                explanation=c["explanation"], cursor=cursor))
        session.narrowed = set(data["narrowed"])
        if data.get("preceding"):
            session.preceding = PrecedingPrompt(**data["preceding"])
            session.preceding_rendered = session.preceding.render()
        if data.get("sensor_knowledge"):
            session.sensor_knowledge = SensorKnowledge(**data["sensor_knowledge"])
        session.retrieval_log = [RetrievalLogEntry(**e)
                                 for e in data["retrieval_log"]]
        session.trajectory = list(data["trajectory"])
        pending = data.get("pending_need")
        session.pending_need = tuple(pending) if pending else None
        session.pending_lab = data.get("pending_lab")
        if data.get("final_report"):
            session.final_report = DiagnosisReport(
                ranked=data["final_report"]["ranked"],
                forced=data["final_report"]["forced"])
        return session

    def export_transcript(self) -> dict:
        """Canonical transcript export: stable across transports and runs."""
        return {
            "patient_id": self.patient_id,
            "demographics": self.demographics.to_dict(),
            "phase": self.phase,
            "turns": [t.to_dict() for t in self.transcript],
            "retrieval_log": [e.to_dict() for e in self.retrieval_log],
            "probability_trajectory": self.trajectory,
            "final_report": self.final_report.to_dict() if self.final_report else None,
        }

    def export_json(self) -> str:
        return json.dumps(self.export_transcript(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# Probability math
# ---------------------------------------------------------------------------

def compute_priors(seeds: Sequence[DiseaseCandidateSeed],
                   demographics: Demographics,
                   incidence: Optional[IncidenceTable], *,
                   symptom_weight: float) -> list[tuple[float, float]]:
    """Per seed: (demographics_prob, prior_prob).

    demographics_prob is the incidence rate normalized over the candidate
    set; candidates without a resolvable rate take the mean of the known
    rates, so a missing table or missing demographics degrades to uniform.
    prior = w * symptom_similarity + (1 - w) * demographics_prob.
    """
    n = len(seeds)
    if n == 0:
        return []
    raws: list[Optional[float]] = []
    for seed in seeds:
        rate = incidence.rate(seed.disease, demographics) if incidence else None
        raws.append(rate)
    known = [r for r in raws if r is not None]
    default = (sum(known) / len(known)) if known else 1.0
    filled = [r if r is not None else default for r in raws]
    total = sum(filled)
    demo_probs = [r / total if total > 0 else 1.0 / n for r in filled]
    w = symptom_weight
    return [(demo, w * seed.symptom_similarity + (1.0 - w) * demo)
            for seed, demo in zip(seeds, demo_probs)]


def update_guideline_probability(candidate: CandidateDisease, *,
                                 floor: float) -> float:
    """Deterministic guideline-based probability from the cursor state.

    Concluded with the candidate's own disease -> 1.0; concluded with a
    different diagnosis (contradicted path) -> floor; otherwise the share
    of confirmed evidence along the current best path, floored at `floor`.
    Candidates without a guideline keep their prior (pinned)."""
    cursor = candidate.cursor
    if cursor is None:
        return candidate.prior_prob
    if cursor.concluded is not None:
        return 1.0 if cursor.concluded == candidate.disease else floor
    required = cursor.required_evidence
    ratio = cursor.satisfied_evidence / required if required > 0 else 0.0
    return max(ratio, floor)


_PROB_LINE_RE = re.compile(r"^\s*[-*]?\s*(.+?)\s*[:=]\s*([01](?:\.\d+)?)\s*$",
                           re.MULTILINE)


def fuse_probabilities(candidates: list[CandidateDisease], mode: str, *,
                       alpha: float, pruning_threshold: float,
                       gateway: Optional[Gateway] = None) -> None:
    """Fill final_prob on every candidate and mark narrowed-out ones.

    deterministic: final ~ prior^alpha * guideline^(1-alpha), normalized
    over active candidates. llm: ask the doctor model to fuse the two
    probability tables, falling back to deterministic on parse failure.
    Already-narrowed candidates stay at 0 and never return; newly narrowed
    are those whose normalized final falls below the pruning threshold
    (the argmax is never narrowed)."""
    if mode not in ("deterministic", "llm"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    active = [c for c in candidates if not c.narrowed]
    for c in candidates:
        if c.narrowed:
            c.final_prob = 0.0
    if not active:
        return

    scores: Optional[list[float]] = None
    if mode == "llm" and gateway is not None:
        table = "\n".join(
            f"- {c.disease}: prior={c.prior_prob:.4f} guideline={c.guideline_prob:.4f}"
            for c in active)
        try:
            reply = gateway.simple_chat(
                "doctor",
                "Fuse each disease's prior and guideline-based probabilities "
                "into a final probability. Reply with one 'disease: value' "
                "line per disease, values in [0, 1].",
                table)
            parsed = {m.group(1).strip().lower(): float(m.group(2))
                      for m in _PROB_LINE_RE.finditer(reply)}
            scores = [parsed[c.disease.lower()] for c in active]
        except (GatewayError, KeyError, ValueError) as exc:
            log.warning("llm fusion failed (%s); falling back to deterministic", exc)
            scores = None

    if scores is None:
        scores = [(c.prior_prob ** alpha) * (c.guideline_prob ** (1.0 - alpha))
                  for c in active]

    total = sum(scores)
    if total <= 0:
        scores = [1.0] * len(active)
        total = float(len(active))
    for c, s in zip(active, scores):
        c.final_prob = s / total

    top = max(active, key=lambda c: c.final_prob)
    newly_narrowed = [c for c in active
                      if c is not top and c.final_prob < pruning_threshold]
    if newly_narrowed:
        for c in newly_narrowed:
            c.narrowed = True
            c.final_prob = 0.0
        survivors = [c for c in active if not c.narrowed]
        total = sum(c.final_prob for c in survivors)
        if total > 0:
            for c in survivors:
                c.final_prob = c.final_prob / total


# ---------------------------------------------------------------------------
# Finding extraction from free text
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(-?\d+(?:\.\d+)?)")
_UNSURE_PHRASES = ("not sure", "don't know", "do not know", "unsure", "no idea",
                   "can't remember", "cannot remember")
_NO_WORDS = ("no", "nope", "not really", "never", "none")
_YES_WORDS = ("yes", "yeah", "yep", "correct", "i do", "i have")


def _is_unsure(text: str) -> bool:
    return any(p in text for p in _UNSURE_PHRASES)


def _leading_bool(text: str) -> Optional[bool]:
    head = text.strip().lower()
    for w in _YES_WORDS:
        if head.startswith(w):
            return True
    for w in _NO_WORDS:
        if head.startswith(w):
            return False
    return None


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class ConsultationEngine:
    """Owns the stores and providers; sessions are plain state objects."""

    def __init__(self, *, gateway: Gateway, config: EngineConfig,
                 library: GuidelineLibrary, symptom_table: SymptomDiseaseTable,
                 knowledge: VectorStore, sensor_store: SensorStore,
                 sensor_index: SensorIndex,
                 incidence: Optional[IncidenceTable] = None,
                 filter_model: Optional[FilterModel] = None):
        self.gateway = gateway
        self.config = config
        self.library = library
        self.symptom_table = symptom_table
        self.knowledge = knowledge
        self.sensor_store = sensor_store
        self.sensor_index = sensor_index
        self.incidence = incidence
        self.filter_model = filter_model
        self.consent: dict[str, bool] = {}
        self._session_counter = 0
        self._metric_aliases = self._build_metric_aliases()

    # -- alias tables ---------------------------------------------------------

    def _build_metric_aliases(self) -> dict[str, str]:
        aliases: dict[str, str] = {}
        for metric, label in METRIC_LABELS.items():
            aliases[label] = metric
            aliases[metric.replace("_", " ")] = metric
        aliases.update({"pulse": "heart_rate_bpm", "spo2": "spo2_percent",
                        "blood oxygen": "spo2_percent",
                        "oxygen level": "spo2_percent",
                        "breathing rate": "respiratory_rate",
                        "respiratory rate": "respiratory_rate",
                        "temperature": "body_temp_c",
                        "hemoglobin": "hemoglobin_g_dl"})
        for tree in self.library.trees.values():
            for metric in tree.metrics:
                aliases.setdefault(metric.replace("_", " "), metric)
        return aliases

    def _metric_units(self, metric: str) -> Optional[str]:
        if metric in METRIC_SPECS:
            return METRIC_SPECS[metric].units
        for tree in self.library.trees.values():
            if metric in tree.metrics:
                return tree.metrics[metric]
        return None

    # -- consent ---------------------------------------------------------------

    def set_consent(self, patient_id: str, allow: bool) -> None:
        self.consent[patient_id] = allow

    def has_consent(self, patient_id: str) -> bool:
        return self.consent.get(patient_id, self.config.consent_default)

    # -- session lifecycle ------------------------------------------------------

    def begin_session(self, sym0: str, demographics: Optional[Demographics] = None,
                      patient_id: str = "anonymous") -> SessionState:
        """Preceding stage: map symptoms to candidate diseases, retrieve their
        guidelines and the top dialogue demonstrations, compute priors, and
        freeze the preceding prompt."""
        if not sym0 or not sym0.strip():
            raise ConsultationError("first symptom report must be non-empty")
        demographics = demographics or Demographics()
        self._session_counter += 1
        session = SessionState(session_id=f"s-{self._session_counter:04d}",
                               patient_id=patient_id, demographics=demographics)
        session.transcript.append(TranscriptTurn(turn=0, role="patient", text=sym0))
        session.symptom_statements.append(sym0)

        seeds = self.symptom_table.map_symptoms_to_diseases(
            sym0, self.config.disease_top_k)
        retrieval = self.library.retrieve(seeds)
        trees = {t.disease: t for t in retrieval.trees}
        priors = compute_priors(seeds, demographics, self.incidence,
                                symptom_weight=self.config.prior_symptom_weight)
        for seed, (demo_prob, prior) in zip(seeds, priors):
            tree = trees.get(seed.disease)
            candidate = CandidateDisease(
                disease=seed.disease, symptom_similarity=seed.symptom_similarity,
                demographics_prob=demo_prob, prior_prob=prior,
                guideline_prob=prior if tree is None else self.config.contradiction_floor,
                cursor=TreeCursor.fresh(tree) if tree else None)
            session.candidates.append(candidate)

        demos = self.knowledge.query(sym0, self.config.demonstration_top_k,
                                     threshold=-1.0, kind="dialogue")
        demo_texts = [self.knowledge.get_chunk(h.chunk_id).text for h in demos]
        session.preceding = PrecedingPrompt(
            overall_instruction=self.config.overall_instruction,
            task_instruction=self.config.task_instruction,
            guideline_texts=[serialize_guideline(t) for t in retrieval.trees],
            demonstrations=demo_texts)
        session.preceding_rendered = session.preceding.render()

        self._extract_findings(session, sym0)
        self._advance_cursors(session)
        self._refresh_probabilities(session)
        session.phase = "consulting"
        return session

    # -- the turn loop ----------------------------------------------------------

    def step(self, session: SessionState,
             patient_msg: Optional[str] = None) -> TurnResult:
        """Run one doctor turn. Provider failures abort the turn and leave
        the session exactly as it was."""
        if session.phase == "concluded":
            raise SessionConcludedError("session already concluded")
        if session.phase != "consulting":
            raise ConsultationError(f"cannot step in phase {session.phase!r}")

        backup = copy.deepcopy(session.__dict__)
        try:
            return self._step_inner(session, patient_msg)
        except Exception:
            session.__dict__.clear()
            session.__dict__.update(backup)
            raise

    def _step_inner(self, session: SessionState,
                    patient_msg: Optional[str]) -> TurnResult:
        turn = session.turn + 1
        if patient_msg is not None:
            session.transcript.append(
                TranscriptTurn(turn=turn, role="patient", text=patient_msg))
            session.symptom_statements.append(patient_msg)
            self._extract_findings(session, patient_msg)
            self._advance_cursors(session)
        sym_i = session.symptom_statements[-1]

        med_texts = self._retrieve_medical(sym_i)
        self.update_candidate_trees(session)
        runtime = self._build_runtime_prompt(session, sym_i, med_texts)
        session.last_runtime = runtime

        doctor_text = self._call_doctor(session, runtime)
        action = parse_action(doctor_text)
        if action is None:
            doctor_text = self._call_doctor(session, runtime, retry_hint=True)
            action = parse_action(doctor_text)
            if action is None:
                raise MalformedActionError(
                    f"doctor reply carries no recognizable action: {doctor_text[:200]}")

        retrieval_info = self._run_sensor_pipeline(session, turn, action)
        self._advance_cursors(session)
        self._refresh_probabilities(session)
        self._note_pending(session, action)
        session.trajectory.append({
            "turn": turn,
            "probabilities": {c.disease: round(c.final_prob, 6)
                              for c in session.candidates},
            "narrowed": sorted(session.narrowed)})

        session.transcript.append(TranscriptTurn(
            turn=turn, role="doctor", text=doctor_text, action=action.to_dict()))
        session.turn = turn

        if action.kind is ActionKind.SUMMARIZE_DIAGNOSIS:
            session.phase = "concluded"
            self.finalize_diagnosis(session)
        elif turn >= self.config.max_turns:
            session.phase = "concluded"
            self.finalize_diagnosis(session, forced=True)

        return TurnResult(
            turn=turn, doctor_msg=doctor_text, action=action,
            candidates=[c.snapshot() for c in session.candidates],
            retrieval_info=retrieval_info, phase=session.phase)

    def _call_doctor(self, session: SessionState, runtime: RuntimePrompt,
                     retry_hint: bool = False) -> str:
        messages = [ChatMessage("system", session.preceding_rendered)]
        history = session.transcript
        if history and history[-1].role == "patient":
            history = history[:-1]  # sym(i) is carried by the runtime prompt
        for t in history:
            role = "assistant" if t.role == "doctor" else "user"
            messages.append(ChatMessage(role, t.text))
        user = runtime.render()
        if retry_hint:
            user += ("\n\nYour previous reply had no ACTION line. Reply again "
                     "and end with exactly one ACTION line.")
        messages.append(ChatMessage("user", user))
        return self.gateway.chat("doctor", ChatRequest(messages=messages)).text

    def _retrieve_medical(self, sym: str) -> list[str]:
        hits = self.knowledge.query(sym, self.config.medical_top_k,
                                    self.config.medical_similarity_threshold,
                                    kind="textbook")
        return [self.knowledge.get_chunk(h.chunk_id).text for h in hits]

    # -- candidate management -----------------------------------------------------

    def update_candidate_trees(self, session: SessionState) -> None:
        """Re-run the symptom-disease mapping over every patient statement so
        far; keep cursors for diseases that remain, drop the rest, add new
        candidates (narrowed-out diseases never come back)."""
        text = " ".join(session.symptom_statements)
        seeds = self.symptom_table.map_symptoms_to_diseases(
            text, self.config.disease_top_k)
        seeds = [s for s in seeds if s.disease not in session.narrowed]
        current = {c.disease: c for c in session.candidates}
        kept: list[CandidateDisease] = []
        new_seeds: list[DiseaseCandidateSeed] = []
        for seed in seeds:
            if seed.disease in current:
                kept.append(current[seed.disease])
            else:
                new_seeds.append(seed)
        if new_seeds:
            priors = compute_priors(new_seeds, session.demographics, self.incidence,
                                    symptom_weight=self.config.prior_symptom_weight)
            for seed, (demo_prob, prior) in zip(new_seeds, priors):
                tree = self.library.get(seed.disease)
                kept.append(CandidateDisease(
                    disease=seed.disease,
                    symptom_similarity=seed.symptom_similarity,
                    demographics_prob=demo_prob, prior_prob=prior,
                    guideline_prob=prior if tree is None else self.config.contradiction_floor,
                    cursor=TreeCursor.fresh(tree) if tree else None))
        # preserve narrowed candidates in the record (still narrowed)
        for c in session.candidates:
            if c.narrowed and c.disease not in {k.disease for k in kept}:
                kept.append(c)
        session.candidates = kept

    def _advance_cursors(self, session: SessionState) -> None:
        for candidate in session.active_candidates():
            if candidate.cursor is None:
                continue
            try:
                candidate.last_outcome = evaluate_step(candidate.cursor,
                                                       session.findings)
            except UnitMismatchError as exc:
                log.warning("candidate %s: %s", candidate.disease, exc)

    def _refresh_probabilities(self, session: SessionState) -> None:
        for candidate in session.active_candidates():
            candidate.guideline_prob = update_guideline_probability(
                candidate, floor=self.config.contradiction_floor)
        fuse_probabilities(session.candidates, self.config.fusion_mode,
                           alpha=self.config.fusion_alpha,
                           pruning_threshold=self.config.pruning_threshold,
                           gateway=self.gateway)
        for candidate in session.candidates:
            if candidate.narrowed:
                session.narrowed.add(candidate.disease)
            candidate.explanation = self._explain(session, candidate)

    def _explain(self, session: SessionState, candidate: CandidateDisease) -> str:
        parts = [f"prior {candidate.prior_prob:.2f} "
                 f"(symptom similarity {candidate.symptom_similarity:.2f}, "
                 f"demographics {candidate.demographics_prob:.2f})"]
        cursor = candidate.cursor
        if cursor is None:
            parts.append("no guideline on file; probability pinned to prior")
        else:
            parts.append(
                f"guideline evidence {cursor.satisfied_evidence}/"
                f"{cursor.required_evidence} along path {' > '.join(cursor.path)}")
            if cursor.concluded:
                parts.append(f"guideline concluded: {cursor.concluded}")
            used = []
            for node_id in cursor.path:
                node = cursor.tree.node(node_id)
                key = node.key if node.kind.value == "question" else node.metric
                if key and key in session.findings:
                    f = session.findings[key]
                    used.append(f"{key}={f.value} ({f.provenance})")
            if used:
                parts.append("findings: " + ", ".join(used))
        sensor_keys = [k for k, f in session.findings.items()
                       if f.provenance == "sensor"]
        if sensor_keys and session.sensor_knowledge is not None:
            cited = ", ".join(session.sensor_knowledge.record_ids[:3])
            parts.append(f"sensor evidence on {', '.join(sorted(sensor_keys))} "
                         f"(records {cited}, ...)")
        return "; ".join(parts)

    # -- sensor pipeline -----------------------------------------------------------

    def _run_sensor_pipeline(self, session: SessionState, turn: int,
                             action: Action) -> dict:
        query_text = action.argument or action.raw_text
        consent = self.has_consent(session.patient_id)
        decision: Optional[FilterDecision] = None
        if self.filter_model is not None:
            decision = should_retrieve(DoctorQuery(query_text), self.filter_model,
                                       self.gateway)

        performed = False
        min_uncertainty: Optional[float] = None
        reliable: Optional[bool] = None
        if action.kind is ActionKind.ACCESS_SENSOR_DATA and consent:
            wants = decision.retrieve if decision is not None else True
            if wants:
                ctx = self.sensor_index.retrieve(
                    DoctorQuery(query_text), session.patient_id,
                    self.config.sensor_top_k, self.config.sensor_similarity_threshold,
                    reliability_threshold=self.config.reliability_threshold)
                performed = True
                if ctx.windows:
                    knowledge = summarize_sensor(
                        DoctorQuery(query_text), ctx, self.gateway,
                        reliability_threshold=self.config.reliability_threshold,
                        instruction=self.config.summarizer_instruction)
                    session.sensor_knowledge = knowledge
                    min_uncertainty = knowledge.min_uncertainty
                    reliable = knowledge.reliable
                    if knowledge.reliable:
                        for metric, value in knowledge.covered_metrics.items():
                            session.findings[metric] = Finding(
                                value=value, units=self._metric_units(metric),
                                provenance="sensor")
                else:
                    session.sensor_knowledge = None

        entry = RetrievalLogEntry(
            turn=turn,
            filter_decision=None if decision is None else decision.retrieve,
            filter_score=None if decision is None else decision.score,
            retrieval_performed=performed,
            min_uncertainty=min_uncertainty,
            reliable=reliable,
            consent=consent)
        session.retrieval_log.append(entry)
        return entry.to_dict()

    # -- prompt assembly --------------------------------------------------------------

    def _build_runtime_prompt(self, session: SessionState, sym: str,
                              med_texts: list[str]) -> RuntimePrompt:
        guidelines = []
        for c in session.candidates:
            status = self._status_line(c)
            guidelines.append(
                f"- disease: {c.disease} | prior={c.prior_prob:.4f} "
                f"guideline={c.guideline_prob:.4f} final={c.final_prob:.4f} | {status}")
        sensor_text: Optional[str] = None
        if session.sensor_knowledge is not None:
            knowledge = session.sensor_knowledge
            lines = [knowledge.summary,
                     f"min uncertainty: {knowledge.min_uncertainty:.4f}"]
            if not knowledge.reliable:
                lines.append(UNRELIABLE_SENSOR_TAG)
            sensor_text = "\n".join(lines)
        return RuntimePrompt(symptoms=sym, med_knowledge=med_texts,
                             guidelines=guidelines, sensor_knowledge=sensor_text)

    @staticmethod
    def _status_line(candidate: CandidateDisease) -> str:
        if candidate.narrowed:
            return "status: NARROWED"
        if candidate.cursor is None:
            return "status: NO GUIDELINE"
        outcome = candidate.last_outcome
        if outcome is None:
            return "status: PENDING"
        if outcome.kind is OutcomeKind.CONCLUDED:
            return f'status: CONCLUDED diagnosis="{outcome.diagnosis}"'
        if outcome.kind is OutcomeKind.NEED_ANSWER:
            return (f'status: AWAITING ANSWER key={outcome.key} '
                    f'question="{outcome.question}"')
        if outcome.kind is OutcomeKind.NEED_MEASUREMENT:
            return f"status: AWAITING MEASUREMENT metric={outcome.metric}"
        return f"status: AWAITING IN-LAB test={outcome.test}"

    # -- findings ---------------------------------------------------------------------

    def _note_pending(self, session: SessionState, action: Action) -> None:
        """Remember what the doctor just asked for, so the next patient reply
        can be bound to a finding key."""
        session.pending_need = None
        session.pending_lab = None
        if action.kind is ActionKind.INQUIRE_SYMPTOM:
            session.pending_need = self._match_need(session, action.argument)
        elif action.kind is ActionKind.REQUEST_INLAB_TEST:
            session.pending_lab = self._match_lab(session, action.argument)

    def _match_need(self, session: SessionState,
                    question: str) -> Optional[tuple[str, str]]:
        q_tokens = set(re.findall(r"[a-z0-9]+", question.lower()))
        best: Optional[tuple[str, str]] = None
        best_score = 0.0
        for c in session.active_candidates():
            outcome = c.last_outcome
            if outcome is None:
                continue
            if outcome.kind is OutcomeKind.NEED_ANSWER:
                target = set(re.findall(r"[a-z0-9]+", (outcome.question or "").lower()))
                target |= set((outcome.key or "").split("_"))
                kind, key = "answer", outcome.key
            elif outcome.kind is OutcomeKind.NEED_MEASUREMENT:
                label = METRIC_LABELS.get(outcome.metric,
                                          outcome.metric.replace("_", " "))
                target = set(label.split()) | set(outcome.metric.split("_"))
                kind, key = "measurement", outcome.metric
            else:
                continue
            overlap = len(q_tokens & target)
            if overlap > best_score:
                best_score = overlap
                best = (kind, key)
        return best

    def _match_lab(self, session: SessionState, argument: str) -> Optional[str]:
        arg_tokens = set(re.findall(r"[a-z0-9]+", argument.lower()))
        for c in session.active_candidates():
            outcome = c.last_outcome
            if outcome is None:
                continue
            if outcome.kind is OutcomeKind.NEED_INLAB and outcome.test:
                if set(outcome.test.split("_")) & arg_tokens or not arg_tokens:
                    return outcome.test
            if outcome.kind is OutcomeKind.NEED_MEASUREMENT and outcome.metric:
                if set(outcome.metric.split("_")) & arg_tokens:
                    return outcome.metric
        for c in session.active_candidates():
            outcome = c.last_outcome
            if outcome is not None and outcome.kind is OutcomeKind.NEED_INLAB:
                return outcome.test
        return argument.strip().lower().replace(" ", "_") or None

    def _extract_findings(self, session: SessionState, text: str) -> None:
        lowered = text.lower()
        unsure = _is_unsure(lowered)

        # reply to a pending in-lab request: record with in-lab provenance
        if session.pending_lab and not unsure:
            number = _NUMBER_RE.search(lowered)
            metric = session.pending_lab
            if number:
                session.findings[metric] = Finding(
                    value=float(number.group(1)),
                    units=self._metric_units(metric), provenance="in-lab")
            elif any(w in lowered for w in ("done", "result", "negative",
                                            "positive", "clear", "normal")):
                session.findings[metric] = Finding(value="done", provenance="in-lab")
            session.pending_lab = None

        # reply to a pending question/measurement
        if session.pending_need and not unsure:
            kind, key = session.pending_need
            if kind == "answer":
                answer = _leading_bool(lowered)
                if answer is not None:
                    session.findings[key] = Finding(value=answer)
                    session.pending_need = None
            else:
                number = _NUMBER_RE.search(lowered)
                if number:
                    session.findings[key] = Finding(
                        value=float(number.group(1)),
                        units=self._metric_units(key),
                        provenance="patient-stated")
                    session.pending_need = None

        # free-text symptom phrases from the alias config
        for key, phrases in self.config.symptom_aliases.items():
            if key in session.findings:
                continue
            for phrase in phrases:
                if phrase in lowered:
                    negated = any(neg + phrase in lowered
                                  for neg in ("no ", "not ", "without "))
                    session.findings[key] = Finding(value=not negated)
                    break

        # metric mentions with a number close by ("my heart rate is 130")
        if not unsure:
            for alias, metric in self._metric_aliases.items():
                if metric in session.findings:
                    continue
                idx = lowered.find(alias)
                if idx < 0:
                    continue
                tail = lowered[idx + len(alias): idx + len(alias) + 24]
                number = _NUMBER_RE.search(tail)
                if number:
                    session.findings[metric] = Finding(
                        value=float(number.group(1)),
                        units=self._metric_units(metric),
                        provenance="patient-stated")

    # -- finalize --------------------------------------------------------------------

    def finalize_diagnosis(self, session: SessionState,
                           forced: bool = False) -> DiagnosisReport:
        """Rank the surviving candidates with explanations; probabilities
        sum to 1. Callers may force conclusion before the doctor summarizes."""
        if session.phase != "concluded":
            session.phase = "concluded"
            forced = True
        survivors = session.active_candidates()
        total = sum(c.final_prob for c in survivors)
        ranked = []
        for c in sorted(survivors, key=lambda c: (-c.final_prob, c.disease)):
            prob = c.final_prob / total if total > 0 else 1.0 / max(len(survivors), 1)
            ranked.append({"disease": c.disease, "probability": round(prob, 9),
                           "explanation": c.explanation})
        report = DiagnosisReport(ranked=ranked, forced=forced)
        session.final_report = report
        return report
