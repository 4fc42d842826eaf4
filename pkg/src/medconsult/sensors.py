"""Patient sensor time series: storage, uncertainty scoring, adaptive
retrieval filtering, and the retrieve-then-summarize pipeline.

Uncertainty for a reading is the Gaussian density of its value under a
trailing baseline window, normalized by the density at the mean, so a score
of 1.0 means "exactly typical" and lower scores mean larger deviation.
Whether a doctor query triggers sensor retrieval at all is decided by a
linear classifier over query embeddings trained with cross-entropy loss.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .gateway import Gateway
from .vector_store import Chunk, VectorStore

log = logging.getLogger("medconsult.sensors")


@dataclass(frozen=True)
class MetricSpec:
    units: str
    lo: float
    hi: float


# Core vocabulary; unknown metrics are accepted without bounds checks.
METRIC_SPECS: dict[str, MetricSpec] = {
    "step_count": MetricSpec("steps", 0, 200_000),
    "sleep_score": MetricSpec("score", 0, 100),
    "spo2_percent": MetricSpec("%", 0, 100),
    "heart_rate_bpm": MetricSpec("bpm", 20, 260),
    "stress_score": MetricSpec("score", 0, 100),
}

METRIC_LABELS = {
    "step_count": "step count",
    "sleep_score": "sleep score",
    "spo2_percent": "oxygen saturation",
    "heart_rate_bpm": "heart rate",
    "stress_score": "stress score",
}


@dataclass
class SensorRecord:
    patient_id: str
    metric: str
    timestamp: datetime
    value: float
    units: Optional[str] = None
    uncertainty: Optional[float] = None

    @property
    def record_id(self) -> str:
        return f"{self.patient_id}/{self.metric}/{self.timestamp.isoformat()}"


@dataclass
class DoctorQuery:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("doctor query must be non-empty")


@dataclass
class IngestReport:
    accepted: int = 0
    replaced: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class SensorWindow:
    """One serialized time bucket of records for a single metric."""

    window_id: str
    patient_id: str
    metric: str
    start: datetime
    end: datetime
    record_ids: list[str]
    mean: float
    lo: float
    hi: float
    count: int
    min_uncertainty: float  # 1.0 when no record in the window is scored
    deviant: bool = False

    def text(self) -> str:
        label = METRIC_LABELS.get(self.metric, self.metric.replace("_", " "))
        units = METRIC_SPECS[self.metric].units if self.metric in METRIC_SPECS else ""
        return (f"Between {self.start.strftime('%Y-%m-%d %H:%M')} and "
                f"{self.end.strftime('%H:%M')} UTC, mean {label} "
                f"{self.mean:.0f} {units}".rstrip() +
                f", range {self.lo:.0f}-{self.hi:.0f}, {self.count} records.")


@dataclass
class SensorContext:
    query: str
    windows: list[SensorWindow]

    @property
    def record_ids(self) -> list[str]:
        ids = []
        for w in self.windows:
            ids.extend(w.record_ids)
        return ids


@dataclass
class SensorKnowledge:
    summary: str
    covered_metrics: dict[str, float]  # metric -> representative (mean) value
    min_uncertainty: float
    reliable: bool
    record_ids: list[str] = field(default_factory=list)


def _parse_ts(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def parse_sensor_csv(text: str) -> list[SensorRecord]:
    reader = csv.DictReader(io.StringIO(text))
    records = []
    for row in reader:
        records.append(SensorRecord(
            patient_id=row["patient_id"], metric=row["metric"],
            timestamp=_parse_ts(row["timestamp"]), value=float(row["value"]),
            units=row.get("units") or None))
    return records


def parse_sensor_jsonl(text: str) -> list[SensorRecord]:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        records.append(SensorRecord(
            patient_id=rec["patient_id"], metric=rec["metric"],
            timestamp=_parse_ts(rec["timestamp"]), value=float(rec["value"]),
            units=rec.get("units")))
    return records


class SensorStore:
    """Per-patient, per-metric record series, kept in timestamp order.

    `retrieval_reads` counts query-path accesses only (consent audits key on
    it); ingestion, profiling, and sync serialization do not bump it.
    """

    def __init__(self):
        self._series: dict[tuple[str, str], list[SensorRecord]] = {}
        self.retrieval_reads = 0

    def ingest_records(self, patient_id: str,
                       records: Sequence[SensorRecord]) -> IngestReport:
        """Append records in timestamp order; duplicates (same patient,
        metric, timestamp) replace the stored value."""
        report = IngestReport()
        for i, rec in enumerate(records):
            if rec.patient_id != patient_id:
                report.rejected.append((i, f"record patient {rec.patient_id!r} "
                                           f"does not match {patient_id!r}"))
                continue
            spec = METRIC_SPECS.get(rec.metric)
            if spec is not None and not (spec.lo <= rec.value <= spec.hi):
                report.rejected.append(
                    (i, f"{rec.metric}={rec.value} outside physical bounds "
                        f"[{spec.lo}, {spec.hi}]"))
                continue
            if spec is not None and rec.units is None:
                rec.units = spec.units
            series = self._series.setdefault((patient_id, rec.metric), [])
            replaced = False
            for j, existing in enumerate(series):
                if existing.timestamp == rec.timestamp:
                    series[j] = rec
                    replaced = True
                    break
            if replaced:
                report.replaced += 1
            else:
                series.append(rec)
                series.sort(key=lambda r: r.timestamp)
                report.accepted += 1
        return report

    def metrics_for(self, patient_id: str) -> list[str]:
        return sorted(m for (p, m) in self._series if p == patient_id)

    def records(self, patient_id: str, metric: str,
                window: Optional[tuple[datetime, datetime]] = None
                ) -> list[SensorRecord]:
        series = self._series.get((patient_id, metric), [])
        if window is None:
            return list(series)
        start, end = window
        return [r for r in series if start <= r.timestamp < end]

    def record_count(self, patient_id: str) -> int:
        return sum(len(s) for (p, _), s in self._series.items() if p == patient_id)

    def record_by_id(self, record_id: str) -> Optional[SensorRecord]:
        patient_id, metric, ts = record_id.split("/", 2)
        for rec in self._series.get((patient_id, metric), []):
            if rec.timestamp.isoformat() == ts:
                return rec
        return None

    # -- uncertainty ---------------------------------------------------------

    def profile_uncertainty(self, patient_id: str, metric: str,
                            window: tuple[datetime, datetime], *,
                            baseline_days: float = 7.0,
                            min_baseline: int = 8,
                            floor: float = 0.01) -> list[float]:
        """Score each record in `window` against a Gaussian fitted to the
        trailing baseline (the `baseline_days` before the window starts).

        score = pdf(value) / pdf(mean) = exp(-(value-mean)^2 / (2 var)),
        so the score is 1.0 at the baseline mean and falls toward 0 as the
        deviation grows. Scores are persisted onto the records. With fewer
        than `min_baseline` baseline records every score is the floor; a
        zero-variance baseline scores identical values 1.0 and anything
        else the floor.
        """
        start, end = window
        baseline = self.records(patient_id, metric,
                                (start - timedelta(days=baseline_days), start))
        targets = self.records(patient_id, metric, window)
        if len(baseline) < min_baseline:
            scores = [floor] * len(targets)
        else:
            values = np.array([r.value for r in baseline], dtype=np.float64)
            mean = float(values.mean())
            var = float(values.var())  # population variance
            scores = []
            for rec in targets:
                if var == 0.0:
                    scores.append(1.0 if rec.value == mean else floor)
                else:
                    scores.append(math.exp(-((rec.value - mean) ** 2) / (2 * var)))
        for rec, score in zip(targets, scores):
            rec.uncertainty = score
        return scores

    # -- serialization for embedding -----------------------------------------

    def serialize_windows(self, patient_id: str,
                          window: Optional[tuple[datetime, datetime]] = None,
                          bucket_hours: int = 1) -> list[SensorWindow]:
        """Group records into fixed time buckets and render one summary doc
        per (metric, bucket). Every window cites the record ids it covers."""
        windows = []
        for metric in self.metrics_for(patient_id):
            buckets: dict[datetime, list[SensorRecord]] = {}
            for rec in self.records(patient_id, metric, window):
                anchor = rec.timestamp.replace(minute=0, second=0, microsecond=0)
                anchor -= timedelta(hours=anchor.hour % bucket_hours)
                buckets.setdefault(anchor, []).append(rec)
            for anchor in sorted(buckets):
                rows = buckets[anchor]
                values = [r.value for r in rows]
                scored = [r.uncertainty for r in rows if r.uncertainty is not None]
                windows.append(SensorWindow(
                    window_id=f"sensor/{patient_id}/{metric}/{anchor.isoformat()}",
                    patient_id=patient_id, metric=metric,
                    start=anchor, end=anchor + timedelta(hours=bucket_hours),
                    record_ids=[r.record_id for r in rows],
                    mean=sum(values) / len(values), lo=min(values), hi=max(values),
                    count=len(rows),
                    min_uncertainty=min(scored) if scored else 1.0))
        return windows


class SensorIndex:
    """Embeds serialized sensor windows into the shared vector store
    (kind=sensor) and answers doctor queries from them."""

    def __init__(self, store: VectorStore, sensors: SensorStore):
        self.store = store
        self.sensors = sensors
        self._windows: dict[str, SensorWindow] = {}

    def sync_patient(self, patient_id: str,
                     window: Optional[tuple[datetime, datetime]] = None) -> int:
        """(Re-)embed this patient's windows; returns how many were written."""
        docs = self.sensors.serialize_windows(patient_id, window)
        written = 0
        for win in docs:
            self._windows[win.window_id] = win
            text = win.text()
            chunk = Chunk(id=-1, source_id=win.window_id, text=text,
                          span=(0, len(text)), kind="sensor")
            self.store.upsert_chunks([chunk])
            written += 1
        return written

    def resolver(self, payload: dict):
        """Sensor-hourly sync resolver for VectorStore.synchronize."""
        patient_id = payload["patient_id"]
        raw = payload.get("window")
        window = None
        if raw:
            window = (_parse_ts(raw[0]), _parse_ts(raw[1]))
        docs = self.sensors.serialize_windows(patient_id, window)
        for win in docs:
            self._windows[win.window_id] = win
            yield win.window_id, win.text()

    def retrieve(self, query: DoctorQuery, patient_id: str, k: int,
                 threshold: float, *,
                 reliability_threshold: float = 0.05) -> SensorContext:
        self.sensors.retrieval_reads += 1
        hits = self.store.query(query.text, k, threshold, kind="sensor",
                                source_prefix=f"sensor/{patient_id}/")
        windows = []
        for hit in hits:
            win = self._windows.get(self.store.get_chunk(hit.chunk_id).source_id)
            if win is not None:
                win.deviant = win.min_uncertainty < reliability_threshold
                windows.append(win)
        return SensorContext(query=query.text, windows=windows)


def summarize_sensor(query: DoctorQuery, ctx: SensorContext, gateway: Gateway, *,
                     reliability_threshold: float = 0.05,
                     instruction: str = "Summarize the sensor data for the doctor."
                     ) -> SensorKnowledge:
    """Summarize retrieved windows via the summarizer provider.

    The reliability flag is computed from the cited records' uncertainty
    scores, never from the summarizer's text.
    """
    if not ctx.windows:
        raise ValueError("summarize_sensor requires a non-empty context")
    min_uncertainty = min(w.min_uncertainty for w in ctx.windows)
    per_metric: dict[str, list[SensorWindow]] = {}
    for w in ctx.windows:
        per_metric.setdefault(w.metric, []).append(w)
    covered = {}
    for metric, wins in per_metric.items():
        total = sum(w.count for w in wins)
        covered[metric] = sum(w.mean * w.count for w in wins) / total

    body = "Doctor's question: " + query.text + "\nSensor data windows:\n"
    body += "\n".join("- " + w.text() for w in ctx.windows)
    summary = gateway.simple_chat("summarizer", instruction, body)
    return SensorKnowledge(summary=summary, covered_metrics=covered,
                           min_uncertainty=min_uncertainty,
                           reliable=min_uncertainty >= reliability_threshold,
                           record_ids=ctx.record_ids)


# ---------------------------------------------------------------------------
# Semantic retrieval filter
# ---------------------------------------------------------------------------

FILTER_MODEL_VERSION = 1


class FilterTrainingError(ValueError):
    pass


@dataclass
class FilterModel:
    """Linear decision over query embeddings: sigmoid(w.x + b) >= threshold."""

    weights: list[float]
    bias: float
    threshold: float
    dim: int
    metadata: dict = field(default_factory=dict)

    def score(self, embedding: Sequence[float]) -> float:
        x = np.asarray(embedding, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError(f"embedding dim {x.shape[0]} != model dim {self.dim}")
        z = float(np.dot(self.weights, x) + self.bias)
        return 1.0 / (1.0 + math.exp(-z))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "version": FILTER_MODEL_VERSION,
            "weights": list(self.weights),
            "bias": self.bias,
            "threshold": self.threshold,
            "dim": self.dim,
            "metadata": self.metadata,
        }, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FilterModel":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if raw.get("version") != FILTER_MODEL_VERSION:
            raise ValueError(f"unsupported filter model version {raw.get('version')}")
        return cls(weights=raw["weights"], bias=raw["bias"],
                   threshold=raw["threshold"], dim=raw["dim"],
                   metadata=raw.get("metadata", {}))


@dataclass
class FilterDecision:
    retrieve: bool
    score: Optional[float]
    failed_open: bool = False


def should_retrieve(query: DoctorQuery, model: FilterModel,
                    gateway: Gateway) -> FilterDecision:
    """Decide whether this doctor turn warrants sensor retrieval.

    Fails open on embedding errors: losing efficiency is acceptable,
    silently losing sensor evidence is not.
    """
    try:
        embedding = gateway.embed_texts([query.text])[0]
    except Exception as exc:
        log.warning("filter embedding failed (%s); failing open to retrieve", exc)
        return FilterDecision(retrieve=True, score=None, failed_open=True)
    score = model.score(embedding)
    return FilterDecision(retrieve=score >= model.threshold, score=score)


def _augment_queries(labeled: Sequence[tuple[str, bool]],
                     gateway: Gateway) -> list[tuple[str, bool]]:
    out = list(labeled)
    for text, label in labeled:
        rewritten = gateway.simple_chat(
            "augmenter",
            "Rewrite the doctor's question with different wording, keeping "
            "exactly the same meaning. Reply with the rewritten question only.",
            text)
        out.append((rewritten, label))
    return out


def train_filter(labeled: Sequence[tuple[str, bool]], gateway: Gateway, *,
                 augment: bool = False,
                 eval_set: Optional[Sequence[tuple[str, bool]]] = None,
                 holdout_fraction: float = 0.25, seed: int = 0,
                 epochs: int = 400, lr: float = 2.0,
                 threshold: float = 0.5) -> tuple[FilterModel, float]:
    """Train the binary retrieval filter on query embeddings.

    Full-batch logistic regression minimizing cross-entropy. With
    augment=True every training query is rewritten once through the
    augmenter provider and added with the same label, doubling the training
    set. Returns the model plus held-out accuracy (on `eval_set` when given,
    else on an internal stratified holdout split).
    """
    labeled = list(labeled)
    if len(labeled) < 20:
        raise FilterTrainingError(f"need at least 20 labeled examples, got {len(labeled)}")
    classes = {label for _, label in labeled}
    if len(classes) < 2:
        raise FilterTrainingError("training data contains a single class")

    if eval_set is None:
        rng = random.Random(seed)
        pos = [ex for ex in labeled if ex[1]]
        neg = [ex for ex in labeled if not ex[1]]
        rng.shuffle(pos)
        rng.shuffle(neg)
        n_pos = max(1, int(len(pos) * holdout_fraction))
        n_neg = max(1, int(len(neg) * holdout_fraction))
        eval_set = pos[:n_pos] + neg[:n_neg]
        train = pos[n_pos:] + neg[n_neg:]
    else:
        eval_set = list(eval_set)
        train = labeled

    sample_count = len(train)
    if augment:
        train = _augment_queries(train, gateway)

    X = np.asarray(gateway.embed_texts([t for t, _ in train]), dtype=np.float64)
    y = np.asarray([1.0 if label else 0.0 for _, label in train])

    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(train)
    for _ in range(epochs):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = X.T @ (p - y) / n
        grad_b = float(np.sum(p - y)) / n
        w -= lr * grad_w
        b -= lr * grad_b

    model = FilterModel(weights=w.tolist(), bias=b, threshold=threshold,
                        dim=X.shape[1],
                        metadata={"sample_count": sample_count,
                                  "augmented": augment})
    correct = 0
    eval_vectors = gateway.embed_texts([t for t, _ in eval_set])
    for vec, (_, label) in zip(eval_vectors, eval_set):
        if (model.score(vec) >= threshold) == label:
            correct += 1
    accuracy = correct / len(eval_set)
    model.metadata["held_out_accuracy"] = accuracy
    return model, accuracy


# ---------------------------------------------------------------------------
# Synthetic labeled corpus for filter training (documented as synthetic; the
# original platform queries are not shipped).
# ---------------------------------------------------------------------------

_SENSOR_TEMPLATES = [
    "Can you tell me your current {metric}?",
    "What was your average {metric} over the {window}?",
    "Could you check the {metric} reading on your watch right now?",
    "Has your resting {metric} changed over the {window}?",
    "What does your smartwatch show for {metric} today?",
    "Please share the {metric} values your device recorded {window}.",
    "Let me look at your {metric} trend from the {window}.",
    "What is your {metric} right now, and your temperature?",
    # long mixed queries: sensor request embedded in unrelated symptom talk
    "Are you experiencing any other symptoms such as {symptom} or trouble "
    "breathing? If so, can you also tell me your current temperature and "
    "{metric}, and whether you have been around anyone with similar symptoms?",
    "Besides the {symptom}, please also share your {metric} from the "
    "{window} so I can rule a few things out.",
    "Tell me more about the {symptom}, and also check what your watch "
    "recorded for {metric} over the {window}.",
]

_SENSOR_METRIC_PHRASES = [
    "heart rate", "pulse", "oxygen saturation", "SpO2", "blood oxygen",
    "sleep score", "sleep quality", "step count", "daily steps",
    "stress score", "resting heart rate",
]

_WINDOWS = ["past week", "last few days", "last night", "past month",
            "last seven days", "past 24 hours"]

_PLAIN_TEMPLATES = [
    "How long have you had this {symptom}?",
    "Where exactly does the {symptom} hurt the most?",
    "When did the {symptom} first appear?",
    "Does anything make the {symptom} better or worse?",
    "Have you taken any medication for the {symptom}?",
    "Is anyone in your family experiencing a similar {symptom}?",
    "Have you traveled anywhere recently before the {symptom} started?",
    "Do you have any allergies I should know about?",
    "Does the {symptom} get worse after eating?",
    "Can you describe how the {symptom} feels?",
    "Can you describe where on your body the {symptom} shows up?",
    "Are you able to keep up your normal routine despite the {symptom}?",
    "Are you able to sleep through the {symptom} at night?",
    # long plain queries, so length alone does not predict the label
    "Are you experiencing any other symptoms besides the {symptom}, and "
    "have you been around anyone with a similar illness in the last two weeks?",
    "Walk me through how the {symptom} developed, what makes it better or "
    "worse, and anything you have already tried for it.",
]

_SYMPTOMS = ["cough", "headache", "rash", "stomach pain", "sore throat",
             "back pain", "dizziness", "fever", "nausea"]


def make_filter_corpus(n: int, seed: int = 0) -> list[tuple[str, bool]]:
    """Generate n labeled (query, needs-sensor) examples, deterministic in seed."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        if i % 2 == 0:
            template = rng.choice(_SENSOR_TEMPLATES)
            text = template.format(metric=rng.choice(_SENSOR_METRIC_PHRASES),
                                   window=rng.choice(_WINDOWS),
                                   symptom=rng.choice(_SYMPTOMS))
            out.append((text, True))
        else:
            template = rng.choice(_PLAIN_TEMPLATES)
            text = template.format(symptom=rng.choice(_SYMPTOMS))
            out.append((text, False))
    return out
