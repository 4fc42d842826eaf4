"""Acceptance suite: every exit criterion at its stated tolerance.

Runs with mocks only (no network, no paid APIs) and prints one
"[ACCEPTANCE] <criterion>: PASS|FAIL" line per criterion.
"""

import json
import math
import random
import time
from datetime import datetime, timezone

import numpy as np
import pytest

from engine_fixtures import (
    FIG2_SYM0,
    build_engine,
    filter_model_for,
    run_fig2_consultation,
)
from medconsult.config import UNRELIABLE_SENSOR_TAG, ChunkPolicy
from medconsult.consultation import ActionKind, fuse_probabilities
from medconsult.evaluation import GptScore, retrieval_rate
from medconsult.gateway import MockGateway
from medconsult.guidelines import (
    GuidelineLibrary,
    SymptomDiseaseTable,
    TreeCursor,
    UnitMismatchError,
    evaluate_step,
    parse_guideline,
    serialize_guideline,
)
from medconsult.sensors import (
    DoctorQuery,
    SensorRecord,
    SensorStore,
    make_filter_corpus,
    should_retrieve,
    train_filter,
)
from medconsult.vector_store import Chunk, VectorStore

from test_guidelines import (
    oracle_walk,
    outcome_tuple,
    random_findings,
    random_tree,
)
from test_consultation import make_candidate

UTC = timezone.utc


@pytest.fixture(autouse=True)
def announce(request):
    yield
    name = request.node.name.replace("test_", "", 1)
    report = getattr(request.node, "rep_call", None)
    verdict = "PASS" if report is not None and report.passed else "FAIL"
    print(f"\n[ACCEPTANCE] {name}: {verdict}")


def test_vector_search_oracle_1000_chunks(fixtures_dir):
    rng = random.Random(11)
    vocab = ["fever", "cough", "sleep", "heart", "rate", "steps", "pain",
             "nausea", "rash", "oxygen", "stress", "fatigue", "ache", "burn",
             "chill", "dizzy", "weak", "sore", "night", "week"]
    gw = MockGateway()
    store = VectorStore(gw.embedder)
    chunks = []
    for i in range(1000):
        text = " ".join(rng.choice(vocab) for _ in range(10))
        chunks.append(Chunk(id=-1, source_id=f"doc{i}", text=text,
                            span=(0, len(text)), kind="textbook"))
    store.upsert_chunks(chunks)
    assert len(store) == 1000

    query = "fever cough oxygen week"
    started = time.perf_counter()
    hits = store.query(query, k=10, threshold=-1.0)
    elapsed = time.perf_counter() - started

    # independent exhaustive oracle with the same tie-break
    qv = np.array(gw.embedder.embed_one(query))
    scored = []
    for chunk in store.all_chunks():
        cv = store.vector_for(chunk.id)
        denom = np.linalg.norm(qv) * np.linalg.norm(cv)
        scored.append((chunk.id, float(qv @ cv / denom) if denom else 0.0))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))

    assert [(h.chunk_id, round(h.similarity, 12)) for h in hits] == \
           [(cid, round(sim, 12)) for cid, sim in scored[:10]]
    assert elapsed < 1.0, f"query took {elapsed:.3f}s"


def test_chunker_reconstruction_across_policy_sweep():
    rng = random.Random(7)
    doc = "".join(rng.choice("abcdefghij klmnop qrstu vwxyz.") for _ in range(5000))
    for chunk_size in (100, 200, 400, 800, 1000, 2000):
        # overlap 100 across the sweep, capped to honor overlap < chunk_size
        overlap = min(100, chunk_size - 1)
        policy = ChunkPolicy(chunk_size, overlap)
        from medconsult.vector_store import chunk_document

        chunks = chunk_document(doc, policy)
        rebuilt = "".join(c.text if i == 0 else c.text[overlap:]
                          for i, c in enumerate(chunks))
        assert rebuilt == doc, f"reconstruction failed at chunk_size={chunk_size}"
        assert all(c.text for c in chunks)


def test_interpreter_equivalence_100x100():
    rng = random.Random(2024)
    disagreements = 0
    for _ in range(100):
        tree = random_tree(rng)
        for _ in range(100):
            findings = random_findings(rng)
            cursor = TreeCursor.fresh(tree)
            try:
                mine = outcome_tuple(evaluate_step(cursor, findings))
            except UnitMismatchError:
                mine = "unit-mismatch"
            try:
                expected = oracle_walk(tree, tree.root, findings)
            except UnitMismatchError:
                expected = "unit-mismatch"
            if mine != expected:
                disagreements += 1
    assert disagreements == 0


def test_dsl_roundtrip_identity_on_fixture_corpus(fixtures_dir):
    files = sorted((fixtures_dir / "guidelines").glob("*.json"))
    assert len(files) >= 10
    assert any(f.stem == "acute_bronchitis" for f in files)
    for file in files:
        tree = parse_guideline(file.read_text(encoding="utf-8"))
        assert parse_guideline(serialize_guideline(tree)) == tree, file.name


def test_mapping_beats_direct_retrieval_by_15_points(fixtures_dir):
    gw = MockGateway()
    table = SymptomDiseaseTable.load_jsonl(fixtures_dir / "symptom_table.jsonl", gw)
    assert len(table.entries) == 50
    library = GuidelineLibrary.load_dir(fixtures_dir / "guidelines")
    paraphrases = [json.loads(line) for line in
                   (fixtures_dir / "paraphrases.jsonl").read_text().splitlines()]

    mapping_hits = 0
    for p in paraphrases:
        seeds = table.map_symptoms_to_diseases(p["text"], 3)
        if seeds and seeds[0].disease == p["disease"]:
            mapping_hits += 1

    store = VectorStore(gw.embedder)
    policy = ChunkPolicy(400, 100)
    for disease, tree in library.trees.items():
        store.ingest_document(disease, serialize_guideline(tree),
                              "guideline-aux", policy)
    direct_hits = 0
    for p in paraphrases:
        hits = store.query(p["text"], 1, threshold=-1.0, kind="guideline-aux")
        if hits and store.get_chunk(hits[0].chunk_id).source_id == p["disease"]:
            direct_hits += 1

    n = len(paraphrases)
    mapping_acc, direct_acc = mapping_hits / n, direct_hits / n
    assert mapping_acc - direct_acc >= 0.15, \
        f"mapping {mapping_acc:.2%} vs direct {direct_acc:.2%}"


def test_filter_accuracy_and_augmentation_direction():
    gw = MockGateway()
    eval_set = make_filter_corpus(100, seed=99)

    t20 = make_filter_corpus(20, seed=0)
    _, acc20 = train_filter(t20, gw, eval_set=eval_set)
    assert acc20 >= 0.90, f"accuracy at 20 samples: {acc20:.3f}"

    t200 = make_filter_corpus(200, seed=0)
    _, acc200 = train_filter(t200, gw, eval_set=eval_set)
    assert acc200 >= 0.95, f"accuracy at 200 samples: {acc200:.3f}"

    _, acc20_aug = train_filter(t20, gw, augment=True, eval_set=eval_set)
    assert acc20_aug >= acc20, \
        f"augmented {acc20_aug:.3f} < plain {acc20:.3f}"


def test_adaptive_retrieval_efficiency_fixture(fixtures_dir):
    gw = MockGateway()
    model = filter_model_for(gw, n=200, seed=1)
    rows = [json.loads(line) for line in
            (fixtures_dir / "filter_dialogue.jsonl").read_text().splitlines()]
    assert len(rows) == 20
    assert sum(1 for r in rows if r["sensor_relevant"]) == 8

    decisions = [should_retrieve(DoctorQuery(r["query"]), model, gw) for r in rows]
    retrievals = sum(1 for d in decisions if d.retrieve)
    missed = [r["query"] for r, d in zip(rows, decisions)
              if r["sensor_relevant"] and not d.retrieve]
    assert missed == [], f"missed relevant turns: {missed}"
    assert retrievals <= 10, f"{retrievals} retrievals exceed the budget"
    always_retrieve = len(rows)
    assert always_retrieve / retrievals >= 2.0


def test_uncertainty_closed_form_math():
    store = SensorStore()
    # baseline alternating 65/75: mean 70, population stddev exactly 5
    baseline = [SensorRecord("p1", "heart_rate_bpm",
                             datetime(2024, 3, 1, h, tzinfo=UTC),
                             65 if h % 2 == 0 else 75) for h in range(10)]
    store.ingest_records("p1", baseline)
    probes = [(70, 1.0), (75, math.exp(-0.5)), (85, math.exp(-4.5))]
    store.ingest_records("p1", [
        SensorRecord("p1", "heart_rate_bpm",
                     datetime(2024, 3, 5, h, tzinfo=UTC), value)
        for h, (value, _) in enumerate(probes)])
    scores = store.profile_uncertainty(
        "p1", "heart_rate_bpm",
        (datetime(2024, 3, 5, tzinfo=UTC), datetime(2024, 3, 6, tzinfo=UTC)))
    assert scores[0] == pytest.approx(1.0, abs=1e-9)
    assert scores[1] == pytest.approx(math.exp(-0.5), abs=1e-9)
    assert scores[2] == pytest.approx(math.exp(-4.5), abs=1e-9)
    assert scores[2] < 0.05


def test_reliability_gating_end_to_end(fixtures_dir):
    # deviant trace: the turn after sensor access carries the unreliable
    # tag and the doctor requests an in-lab test
    engine = build_engine(fixtures_dir, sensor_csv="sensors_deviant.csv")
    session, _ = run_fig2_consultation(engine)
    kinds = [t.action["kind"] for t in session.transcript if t.action]
    sensor_idx = kinds.index("access_sensor_data")
    assert kinds[sensor_idx + 1] == "request_inlab_test"
    assert session.sensor_knowledge.reliable is False
    tagged_prompt = session.last_runtime.render()
    assert UNRELIABLE_SENSOR_TAG in tagged_prompt

    # normal trace: knowledge consumed, no in-lab request anywhere
    engine2 = build_engine(fixtures_dir, sensor_csv="sensors_normal.csv")
    session2, _ = run_fig2_consultation(engine2)
    kinds2 = [t.action["kind"] for t in session2.transcript if t.action]
    assert "access_sensor_data" in kinds2
    assert "request_inlab_test" not in kinds2
    assert session2.findings["heart_rate_bpm"].provenance == "sensor"
    assert UNRELIABLE_SENSOR_TAG not in session2.last_runtime.render()


def test_fig2_differential_fixture(fixtures_dir):
    engine = build_engine(fixtures_dir, sensor_csv="sensors_normal.csv")
    session, _ = run_fig2_consultation(engine)
    diseases_seen = {c.disease for c in session.candidates}
    assert {"gastritis", "hyperthyroidism"} <= diseases_seen
    report = session.final_report
    assert report.ranked[0]["disease"] == "gastritis"
    assert sum(r["probability"] for r in report.ranked) == pytest.approx(
        1.0, abs=1e-9)


def test_probability_properties(fixtures_dir):
    # fuse argmax invariant under uniform positive rescaling of priors
    rng = random.Random(5)
    for _ in range(25):
        spec = [(f"d{i}", rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0))
                for i in range(4)]
        argmaxes = set()
        for scale in (0.2, 1.0, 5.0):
            cands = [make_candidate(d, prior=p * scale, guideline=g)
                     for d, p, g in spec]
            fuse_probabilities(cands, "deterministic", alpha=0.3,
                               pruning_threshold=0.0)
            argmaxes.add(max(cands, key=lambda c: c.final_prob).disease)
        assert len(argmaxes) == 1

    engine = build_engine(fixtures_dir)
    session, _ = run_fig2_consultation(engine)

    # narrowing monotone
    seen = set()
    for point in session.trajectory:
        narrowed = set(point["narrowed"])
        assert seen <= narrowed
        seen = narrowed

    # preceding prompt byte-stable
    assert session.preceding.render() == session.preceding_rendered

    # runtime prompt structurally matches the four-part composition
    rendered = session.last_runtime.render()
    markers = ["== PATIENT SYMPTOMS (CURRENT TURN) ==",
               "== RETRIEVED MEDICAL KNOWLEDGE ==",
               "== CANDIDATE GUIDELINES (UPDATED) ==",
               "== SENSOR DATA KNOWLEDGE (PREVIOUS TURN) =="]
    positions = [rendered.index(m) for m in markers]
    assert positions == sorted(positions)
    assert all(rendered.count(m) == 1 for m in markers)

    # probabilities stay in [0, 1] everywhere
    for point in session.trajectory:
        for prob in point["probabilities"].values():
            assert 0.0 <= prob <= 1.0


def test_determinism_parity_and_recovery(fixtures_dir, tmp_path):
    # two scripted end-to-end runs produce byte-identical transcripts
    exports = []
    for _ in range(2):
        engine = build_engine(fixtures_dir)
        session, _ = run_fig2_consultation(engine)
        exports.append(session.export_json())
    assert exports[0] == exports[1]

    # HTTP vs in-process parity on the same fixture
    from fastapi.testclient import TestClient

    from medconsult.service import ServiceRuntime, SessionLog, create_app

    runtime = ServiceRuntime(engine=build_engine(fixtures_dir),
                             log=SessionLog(tmp_path / "sessions"))
    runtime.recover()
    client = TestClient(create_app(runtime))
    created = client.post("/v1/sessions", json={
        "patient_id": "p1", "first_symptoms": FIG2_SYM0}).json()
    sid = created["session"]["session_id"]
    client.post(f"/v1/sessions/{sid}/messages",
                json={"text": "I'm not sure, I haven't measured it."})
    client.post(f"/v1/sessions/{sid}/messages", json={"text": "Okay."})
    http_export = json.dumps(client.get(f"/v1/sessions/{sid}").json()["transcript"],
                             sort_keys=True, indent=2)
    assert http_export == exports[0]

    # crash recovery restores exactly the completed turns
    log_file = tmp_path / "sessions" / f"{sid}.jsonl"
    lines = log_file.read_text().splitlines()
    log_file.write_text("\n".join(lines) + "\n" + '{"seq": 99, "state": {"hal')
    runtime2 = ServiceRuntime(engine=build_engine(fixtures_dir),
                              log=SessionLog(tmp_path / "sessions"))
    runtime2.recover()
    assert runtime2.sessions[sid].turn == 3
    recovered = json.dumps(runtime2.sessions[sid].export_transcript(),
                           sort_keys=True, indent=2)
    assert recovered == exports[0]


def test_evaluation_scoring_and_retrieval_rate(fixtures_dir):
    score = GptScore(compliance=8, sensor_utilization=7, accuracy=9)
    assert score.overall == pytest.approx((8 + 7 + 9) / 3, abs=1e-9)

    transcript = {
        "turns": [{"turn": i, "role": "doctor", "text": "..."} for i in range(20)],
        "retrieval_log": [{"turn": i, "retrieval_performed": i < 8}
                          for i in range(20)],
    }
    assert retrieval_rate(transcript) == pytest.approx(8 / 20)

    # hand count on a real consultation
    engine = build_engine(fixtures_dir)
    session, _ = run_fig2_consultation(engine)
    export = session.export_transcript()
    doctor_turns = sum(1 for t in export["turns"] if t["role"] == "doctor")
    performed = sum(1 for e in export["retrieval_log"]
                    if e["retrieval_performed"])
    assert retrieval_rate(export) == pytest.approx(performed / doctor_turns)
