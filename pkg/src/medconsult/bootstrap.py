"""Wire a complete offline engine from a data directory.

Expected layout (the repo's fixtures/ directory follows it):
    guidelines/*.json         guideline trees in the DSL
    symptom_table.jsonl       {"symptom": ..., "diseases": [...]}
    textbook.jsonl            {"source_id", "kind", "text"} medical snippets
    demonstrations.jsonl      {"source_id", "kind", "text"} dialogue demos
    incidence.json            demographic incidence records
    symptom_aliases.json      finding key -> trigger phrases (optional)
    sensors_*.csv             sensor traces (optional)
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .config import EngineConfig
from .consultation import ConsultationEngine, IncidenceTable
from .gateway import Gateway, MockGateway
from .guidelines import GuidelineLibrary, SymptomDiseaseTable
from .mocks import AutoDoctor, template_summarizer
from .sensors import (
    FilterModel,
    SensorIndex,
    SensorStore,
    make_filter_corpus,
    parse_sensor_csv,
    train_filter,
)
from .vector_store import VectorStore


def default_mock_gateway(doctor=None, summarizer=None, handlers=None) -> MockGateway:
    merged = dict(handlers or {})
    merged.setdefault("doctor", doctor or AutoDoctor())
    merged.setdefault("summarizer", summarizer or template_summarizer)
    return MockGateway(handlers=merged)


def load_config(data_dir: Path, config: Optional[EngineConfig] = None) -> EngineConfig:
    config = config or EngineConfig()
    aliases_file = data_dir / "symptom_aliases.json"
    if not config.symptom_aliases and aliases_file.exists():
        config.symptom_aliases = json.loads(aliases_file.read_text(encoding="utf-8"))
    return config


def load_knowledge(data_dir: Path, gateway: Gateway,
                   config: EngineConfig) -> VectorStore:
    store = VectorStore(gateway.embedder if isinstance(gateway, MockGateway)
                        else _RemoteEmbedder(gateway))
    for name in ("textbook.jsonl", "demonstrations.jsonl"):
        path = data_dir / name
        if not path.exists():
            continue
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            store.ingest_document(doc["source_id"], doc["text"], doc["kind"],
                                  config.chunk_policy)
    return store


class _RemoteEmbedder:
    """Adapts a gateway's embed_texts to the store's embedder interface."""

    def __init__(self, gateway: Gateway):
        self._gateway = gateway

    def embed(self, texts):
        return self._gateway.embed_texts(texts)


def load_sensor_trace(engine_store: SensorStore, csv_path: Path,
                      patient_id: str, config: EngineConfig,
                      index: Optional[SensorIndex] = None) -> tuple:
    """Ingest a CSV trace, then score and index its trailing day."""
    from datetime import timedelta

    records = parse_sensor_csv(csv_path.read_text(encoding="utf-8"))
    report = engine_store.ingest_records(patient_id, records)
    window = None
    if records:
        last = max(r.timestamp for r in records)
        start = last.replace(hour=0, minute=0, second=0, microsecond=0)
        window = (start, start + timedelta(days=1))
        for metric in {r.metric for r in records}:
            engine_store.profile_uncertainty(
                patient_id, metric, window,
                baseline_days=config.baseline_days,
                min_baseline=config.min_baseline_records,
                floor=config.uncertainty_floor)
        if index is not None:
            index.sync_patient(patient_id, window)
    return report, window


def default_filter_model(gateway: Gateway, *, train_size: int = 200,
                         seed: int = 1) -> FilterModel:
    model, _ = train_filter(make_filter_corpus(train_size, seed=seed), gateway,
                            eval_set=make_filter_corpus(100, seed=99))
    return model


def build_offline_engine(data_dir: str | Path, *,
                         gateway: Optional[Gateway] = None,
                         config: Optional[EngineConfig] = None,
                         sensor_csv: Optional[str] = None,
                         sensor_patient: str = "p1",
                         with_filter: bool = True,
                         filter_model: Optional[FilterModel] = None
                         ) -> ConsultationEngine:
    """Everything wired from files, deterministic mocks by default."""
    data_dir = Path(data_dir)
    gateway = gateway or default_mock_gateway()
    config = load_config(data_dir, config)

    knowledge = load_knowledge(data_dir, gateway, config)
    sensor_store = SensorStore()
    sensor_index = SensorIndex(knowledge, sensor_store)
    if sensor_csv:
        load_sensor_trace(sensor_store, data_dir / sensor_csv, sensor_patient,
                          config, sensor_index)

    incidence_path = data_dir / "incidence.json"
    model = filter_model
    if model is None and with_filter:
        model = default_filter_model(gateway)

    return ConsultationEngine(
        gateway=gateway, config=config,
        library=GuidelineLibrary.load_dir(data_dir / "guidelines"),
        symptom_table=SymptomDiseaseTable.load_jsonl(
            data_dir / "symptom_table.jsonl", gateway),
        knowledge=knowledge, sensor_store=sensor_store,
        sensor_index=sensor_index,
        incidence=IncidenceTable.load(incidence_path)
        if incidence_path.exists() else None,
        filter_model=model)
