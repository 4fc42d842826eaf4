"""Sensor store, uncertainty math, retrieval filter, and summarize pipeline."""

import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from medconsult.gateway import MockGateway, ScriptedTranscript
from medconsult.sensors import (
    DoctorQuery,
    FilterModel,
    FilterTrainingError,
    SensorIndex,
    SensorRecord,
    SensorStore,
    make_filter_corpus,
    parse_sensor_csv,
    should_retrieve,
    summarize_sensor,
    train_filter,
)
from medconsult.vector_store import VectorStore

UTC = timezone.utc


def ts(day, hour=0, minute=0):
    return datetime(2024, 3, day, hour, minute, tzinfo=UTC)


def hr(day, hour, value, minute=0):
    return SensorRecord("p1", "heart_rate_bpm", ts(day, hour, minute), value)


def make_baseline(store: SensorStore):
    """Ten baseline records alternating 65/75: mean 70, population stddev 5."""
    records = [hr(1, h, 65 if h % 2 == 0 else 75) for h in range(10)]
    store.ingest_records("p1", records)


class TestIngest:
    def test_three_valid_records_accepted(self):
        store = SensorStore()
        report = store.ingest_records("p1", [hr(1, 0, 70), hr(1, 1, 72), hr(1, 2, 74)])
        assert report.accepted == 3
        assert report.rejected == []

    def test_spo2_out_of_bounds_rejected(self):
        store = SensorStore()
        bad = SensorRecord("p1", "spo2_percent", ts(1), 130)
        report = store.ingest_records("p1", [bad])
        assert report.accepted == 0
        assert len(report.rejected) == 1
        assert "bounds" in report.rejected[0][1]

    def test_duplicate_timestamp_replaces(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(1, 0, 70)])
        report = store.ingest_records("p1", [hr(1, 0, 99)])
        assert report.replaced == 1
        assert store.records("p1", "heart_rate_bpm")[0].value == 99

    def test_records_kept_in_timestamp_order(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(2, 0, 70), hr(1, 0, 60), hr(3, 0, 80)])
        values = [r.value for r in store.records("p1", "heart_rate_bpm")]
        assert values == [60, 70, 80]

    def test_csv_fixture_accepted_count_matches_line_oracle(self, fixtures_dir):
        text = (fixtures_dir / "sensors_normal.csv").read_text()
        # oracle: raw line count minus header; every fixture row is in bounds
        expected = len([l for l in text.strip().splitlines() if l]) - 1
        records = parse_sensor_csv(text)
        store = SensorStore()
        report = store.ingest_records("p1", records)
        assert report.accepted == expected
        assert report.rejected == []


class TestUncertainty:
    window = (ts(5), ts(6))

    def test_score_at_mean_is_one(self):
        store = SensorStore()
        make_baseline(store)
        store.ingest_records("p1", [hr(5, 0, 70)])
        [score] = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert score == pytest.approx(1.0, abs=1e-12)

    def test_one_sigma_closed_form(self):
        store = SensorStore()
        make_baseline(store)
        store.ingest_records("p1", [hr(5, 0, 75)])
        [score] = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert score == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_three_sigma_closed_form_and_unreliable(self):
        store = SensorStore()
        make_baseline(store)
        store.ingest_records("p1", [hr(5, 0, 85)])
        [score] = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert score == pytest.approx(math.exp(-4.5), abs=1e-9)
        assert score < 0.05  # below the default reliability threshold

    def test_scores_persisted_onto_records(self):
        store = SensorStore()
        make_baseline(store)
        store.ingest_records("p1", [hr(5, 0, 75)])
        store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        [rec] = store.records("p1", "heart_rate_bpm", self.window)
        assert rec.uncertainty == pytest.approx(math.exp(-0.5))

    def test_insufficient_baseline_floors_all(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(1, 0, 70), hr(1, 1, 71)])  # only 2 baseline
        store.ingest_records("p1", [hr(5, 0, 70)])
        scores = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert scores == [0.01]

    def test_zero_variance_baseline(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(1, h, 70) for h in range(10)])
        store.ingest_records("p1", [hr(5, 0, 70), hr(5, 1, 71)])
        scores = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert scores == [1.0, 0.01]

    def test_scores_non_increasing_in_deviation(self):
        store = SensorStore()
        make_baseline(store)
        values = [70, 71, 73, 76, 80, 85, 91, 98]
        store.ingest_records("p1", [hr(5, h, v) for h, v in enumerate(values)])
        scores = store.profile_uncertainty("p1", "heart_rate_bpm", self.window)
        assert all(0.0 < s <= 1.0 for s in scores)
        assert scores == sorted(scores, reverse=True)


class TestWindowsAndRetrieval:
    def _indexed_store(self):
        store = SensorStore()
        make_baseline(store)
        gw = MockGateway()
        index = SensorIndex(VectorStore(gw.embedder), store)
        return store, index

    def test_windows_cite_record_ids(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(1, 0, 70, minute=0), hr(1, 0, 72, minute=30)])
        [window] = store.serialize_windows("p1")
        assert len(window.record_ids) == 2
        assert all(store.record_by_id(rid) is not None for rid in window.record_ids)

    def test_single_metric_store_returns_only_that_metric(self):
        store, index = self._indexed_store()
        index.sync_patient("p1")
        ctx = index.retrieve(DoctorQuery("what was the heart rate?"), "p1",
                             k=5, threshold=0.0)
        assert ctx.windows
        assert {w.metric for w in ctx.windows} == {"heart_rate_bpm"}

    def test_empty_store_empty_context(self):
        store = SensorStore()
        index = SensorIndex(VectorStore(MockGateway().embedder), store)
        ctx = index.retrieve(DoctorQuery("heart rate?"), "p1", k=3, threshold=0.0)
        assert ctx.windows == []

    def test_mixed_metric_hits_match_brute_force(self):
        store = SensorStore()
        store.ingest_records("p1", [hr(1, h, 70 + h) for h in range(4)])
        sleep = [SensorRecord("p1", "sleep_score", ts(1 + d), 60 + d) for d in range(3)]
        steps = [SensorRecord("p1", "step_count", ts(1, 12 + h), 900 + h) for h in range(3)]
        store.ingest_records("p1", sleep + steps)
        gw = MockGateway()
        index = SensorIndex(VectorStore(gw.embedder), store)
        index.sync_patient("p1")

        query = "how well did the patient sleep this week"
        ctx = index.retrieve(DoctorQuery(query), "p1", k=4, threshold=-1.0)

        # oracle: exhaustive cosine over every serialized window text
        qv = np.array(gw.embedder.embed_one(query))
        scored = []
        for win in store.serialize_windows("p1"):
            wv = np.array(gw.embedder.embed_one(win.text()))
            denom = np.linalg.norm(qv) * np.linalg.norm(wv)
            scored.append((win.window_id, float(qv @ wv / denom) if denom else 0.0))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        assert [w.window_id for w in ctx.windows] == [wid for wid, _ in scored[:4]]

    def test_retrieval_reads_counter(self):
        store, index = self._indexed_store()
        index.sync_patient("p1")
        assert store.retrieval_reads == 0
        index.retrieve(DoctorQuery("heart rate"), "p1", k=1, threshold=0.0)
        index.retrieve(DoctorQuery("heart rate"), "p1", k=1, threshold=0.0)
        assert store.retrieval_reads == 2


class TestSummarize:
    def _context(self, uncertainties):
        store = SensorStore()
        make_baseline(store)
        index = SensorIndex(VectorStore(MockGateway().embedder), store)
        index.sync_patient("p1")
        ctx = index.retrieve(DoctorQuery("heart rate please"), "p1", k=10,
                             threshold=-1.0)
        for window, u in zip(ctx.windows, uncertainties):
            window.min_uncertainty = u
        return ctx

    def test_reliable_when_all_cited_records_clean(self):
        ctx = self._context([1.0] * 10)
        gw = MockGateway(handlers={"summarizer": lambda req: "steady"})
        knowledge = summarize_sensor(DoctorQuery("hr?"), ctx, gw)
        assert knowledge.reliable is True
        assert knowledge.min_uncertainty == 1.0

    def test_unreliable_when_one_record_deviant(self):
        uncertainties = [1.0] * 10
        uncertainties[3] = math.exp(-4.5)
        ctx = self._context(uncertainties)
        gw = MockGateway(handlers={"summarizer": lambda req: "looks fine to me"})
        knowledge = summarize_sensor(DoctorQuery("hr?"), ctx, gw)
        # flag computed from cited records, not from summarizer text
        assert knowledge.reliable is False
        assert knowledge.min_uncertainty == pytest.approx(math.exp(-4.5))

    def test_scripted_summary_byte_for_byte(self):
        ctx = self._context([1.0] * 10)
        script = ScriptedTranscript([(None, "Mean heart rate 70 bpm, normal range.")])
        gw = MockGateway(handlers={"summarizer": script})
        knowledge = summarize_sensor(DoctorQuery("hr?"), ctx, gw)
        assert knowledge.summary == "Mean heart rate 70 bpm, normal range."

    def test_empty_context_rejected(self):
        gw = MockGateway(handlers={"summarizer": lambda req: "x"})
        from medconsult.sensors import SensorContext
        with pytest.raises(ValueError):
            summarize_sensor(DoctorQuery("hr?"), SensorContext("hr?", []), gw)

    def test_covered_metrics_carry_mean_values(self):
        ctx = self._context([1.0] * 10)
        gw = MockGateway(handlers={"summarizer": lambda req: "ok"})
        knowledge = summarize_sensor(DoctorQuery("hr?"), ctx, gw)
        assert knowledge.covered_metrics["heart_rate_bpm"] == pytest.approx(70.0)


class TestFilter:
    def test_determinism(self):
        gw = MockGateway()
        model, _ = train_filter(make_filter_corpus(40, seed=3), gw)
        q = DoctorQuery("What is your sleep score lately?")
        first = should_retrieve(q, model, gw)
        second = should_retrieve(q, model, gw)
        assert first == second

    def test_fail_open_on_embedding_failure(self):
        gw = MockGateway()
        model, _ = train_filter(make_filter_corpus(40, seed=3), gw)

        class BrokenGateway:
            def embed_texts(self, texts):
                raise RuntimeError("embedder offline")

        decision = should_retrieve(DoctorQuery("anything"), model, BrokenGateway())
        assert decision.retrieve is True
        assert decision.failed_open is True
        assert decision.score is None

    def test_too_few_examples_rejected(self):
        with pytest.raises(FilterTrainingError):
            train_filter(make_filter_corpus(10, seed=0), MockGateway())

    def test_single_class_rejected(self):
        labeled = [(f"question number {i}", True) for i in range(25)]
        with pytest.raises(FilterTrainingError):
            train_filter(labeled, MockGateway())

    def test_internal_holdout_split(self):
        gw = MockGateway()
        model, acc = train_filter(make_filter_corpus(80, seed=2), gw)
        assert 0.0 <= acc <= 1.0
        assert model.metadata["held_out_accuracy"] == acc

    def test_model_artifact_roundtrip(self, tmp_path):
        gw = MockGateway()
        model, _ = train_filter(make_filter_corpus(40, seed=3), gw)
        path = tmp_path / "filter.json"
        model.save(path)
        loaded = FilterModel.load(path)
        vec = gw.embed_texts(["check my heart rate"])[0]
        assert loaded.score(vec) == pytest.approx(model.score(vec))
        assert loaded.metadata["augmented"] is False

    def test_augment_doubles_training_set(self):
        gw = MockGateway()
        labeled = make_filter_corpus(24, seed=4)
        model, _ = train_filter(labeled, gw, augment=True,
                                eval_set=make_filter_corpus(20, seed=5))
        # one augmenter chat per training example
        augmenter_calls = [c for c in gw.calls if c[0] == "augmenter"]
        assert len(augmenter_calls) == 24
        assert model.metadata["augmented"] is True
