"""Vector store tests against independent chunking and cosine oracles."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medconsult.config import ChunkPolicy
from medconsult.gateway import MockGateway
from medconsult.vector_store import (
    Chunk,
    SyncEvent,
    VectorStore,
    VectorStoreError,
    chunk_document,
)


# -- independent oracles -----------------------------------------------------

def sliding_window_starts(doc_len: int, chunk_size: int, overlap: int) -> list[int]:
    """Enumerate chunk start offsets by stepping a window, no arithmetic shared
    with the implementation."""
    starts = []
    pos = 0
    while pos < doc_len:
        starts.append(pos)
        pos = pos + chunk_size - overlap
    return starts


def brute_force_ranking(store: VectorStore, query_text: str) -> list[tuple[int, float]]:
    """Exhaustive pairwise cosine over every stored chunk."""
    qvec = np.asarray(store.embedder.embed([query_text])[0])
    qn = np.linalg.norm(qvec)
    scored = []
    for chunk in store.all_chunks():
        v = store.vector_for(chunk.id)
        vn = np.linalg.norm(v)
        sim = float(qvec @ v / (qn * vn)) if qn > 0 and vn > 0 else 0.0
        scored.append((chunk.id, sim))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def random_text(rng: random.Random, n_words: int) -> str:
    vocab = ["fever", "cough", "sleep", "heart", "rate", "steps", "pain",
             "nausea", "rash", "oxygen", "stress", "fatigue", "chill", "ache"]
    return " ".join(rng.choice(vocab) for _ in range(n_words))


def fresh_store() -> VectorStore:
    return VectorStore(MockGateway().embedder)


def make_chunks(texts, kind="textbook", source="src"):
    out = []
    offset = 0
    for t in texts:
        out.append(Chunk(id=-1, source_id=source, text=t,
                         span=(offset, offset + len(t)), kind=kind))
        offset += len(t)
    return out


# -- chunking ------------------------------------------------------------------

class TestChunkDocument:
    def test_empty_document(self):
        assert chunk_document("", ChunkPolicy(400, 100)) == []

    def test_short_document_single_chunk(self):
        doc = "x" * 300
        chunks = chunk_document(doc, ChunkPolicy(400, 100))
        assert len(chunks) == 1
        assert chunks[0].span == (0, 300)
        assert chunks[0].text == doc

    def test_1000_char_doc_offsets_match_oracle(self):
        doc = "".join(chr(ord("a") + i % 26) for i in range(1000))
        chunks = chunk_document(doc, ChunkPolicy(400, 100))
        starts = [c.span[0] for c in chunks]
        assert starts == sliding_window_starts(1000, 400, 100)
        assert starts == [0, 300, 600, 900]

    def test_chunks_are_exact_spans(self):
        doc = "".join(chr(ord("a") + i % 26) for i in range(1234))
        for chunk in chunk_document(doc, ChunkPolicy(200, 50)):
            start, end = chunk.span
            assert chunk.text == doc[start:end]
            assert end > start

    @given(doc_len=st.integers(0, 5000),
           chunk_size=st.integers(2, 600),
           overlap_frac=st.floats(0, 0.99))
    @settings(max_examples=120, deadline=None)
    def test_reconstruction_property(self, doc_len, chunk_size, overlap_frac):
        overlap = int(chunk_size * overlap_frac)
        rng = random.Random(doc_len * 31 + chunk_size)
        doc = "".join(rng.choice("abcdefgh ") for _ in range(doc_len))
        chunks = chunk_document(doc, ChunkPolicy(chunk_size, overlap))
        rebuilt = "".join(
            c.text if i == 0 else c.text[overlap:] for i, c in enumerate(chunks))
        assert rebuilt == doc

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ChunkPolicy(100, 100)
        with pytest.raises(ValueError):
            ChunkPolicy(100, -1)
        with pytest.raises(ValueError):
            ChunkPolicy(0, 0)


# -- upsert ---------------------------------------------------------------------

class TestUpsert:
    def test_fresh_store_assigns_insertion_order_ids(self):
        store = fresh_store()
        ids = store.upsert_chunks(make_chunks(["one", "two", "three"]))
        assert ids == [0, 1, 2]

    def test_reupsert_same_key_keeps_id_updates_text(self):
        store = fresh_store()
        [cid] = store.upsert_chunks(make_chunks(["original"]))
        updated = Chunk(id=-1, source_id="src", text="replaced", span=(0, 8), kind="textbook")
        [cid2] = store.upsert_chunks([updated])
        assert cid2 == cid
        assert store.get_chunk(cid).text == "replaced"
        assert len(store) == 1

    def test_embedder_failure_leaves_store_unchanged(self):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["keep me"]))

        class Boom:
            def embed(self, texts):
                raise RuntimeError("down")

        store_bad = VectorStore(Boom())
        with pytest.raises(VectorStoreError):
            store_bad.upsert_chunks(make_chunks(["a", "b"]))
        assert len(store_bad) == 0
        assert len(store) == 1

    def test_empty_chunk_text_rejected(self):
        store = fresh_store()
        bad = Chunk(id=-1, source_id="s", text="x", span=(0, 1), kind="textbook")
        bad.text = ""
        with pytest.raises(ValueError):
            store.upsert_chunks([bad])


# -- query ------------------------------------------------------------------------

class TestQuery:
    def test_self_similarity_rank_one(self):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["fever and cough", "sleep quality low"]))
        hits = store.query("fever and cough", k=1)
        assert hits[0].chunk_id == 0
        assert abs(hits[0].similarity - 1.0) < 1e-9
        assert hits[0].rank == 1

    def test_empty_store_returns_empty(self):
        assert fresh_store().query("anything", k=5) == []

    def test_topk_matches_brute_force_oracle(self):
        rng = random.Random(42)
        store = fresh_store()
        store.upsert_chunks(make_chunks([random_text(rng, 8) for _ in range(10)]))
        q = random_text(rng, 5)
        hits = store.query(q, k=3, threshold=-1.0)
        oracle = brute_force_ranking(store, q)[:3]
        assert [(h.chunk_id, round(h.similarity, 12)) for h in hits] == \
               [(cid, round(sim, 12)) for cid, sim in oracle]

    def test_threshold_monotonicity(self):
        rng = random.Random(7)
        store = fresh_store()
        store.upsert_chunks(make_chunks([random_text(rng, 6) for _ in range(30)]))
        q = random_text(rng, 6)
        lo = {h.chunk_id for h in store.query(q, k=30, threshold=0.1)}
        hi = {h.chunk_id for h in store.query(q, k=30, threshold=0.4)}
        assert hi <= lo

    def test_kind_filter(self):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["cough remedy"], kind="textbook", source="t"))
        store.upsert_chunks(make_chunks(["cough dialogue"], kind="dialogue", source="d"))
        hits = store.query("cough", k=10, kind="dialogue")
        assert [store.get_chunk(h.chunk_id).kind for h in hits] == ["dialogue"]

    def test_tie_break_ascending_chunk_id(self):
        store = fresh_store()
        # identical texts at different spans embed identically -> exact tie
        c1 = Chunk(id=-1, source_id="a", text="same text", span=(0, 9), kind="textbook")
        c2 = Chunk(id=-1, source_id="b", text="same text", span=(0, 9), kind="textbook")
        store.upsert_chunks([c1, c2])
        hits = store.query("same text", k=2)
        assert [h.chunk_id for h in hits] == [0, 1]


# -- synchronize -------------------------------------------------------------------

class TestSynchronize:
    policy = ChunkPolicy(40, 10)

    def test_new_document_added_counts(self):
        store = fresh_store()
        doc = "d" * 100
        report = store.synchronize(
            SyncEvent("medical-update", {"documents": [
                {"source_id": "doc1", "kind": "textbook", "text": doc}]}),
            policy=self.policy)
        expected = len(sliding_window_starts(100, 40, 10))
        assert report.added == expected
        assert report.replaced == 0

    def test_replacing_document_counts_old_chunks(self):
        store = fresh_store()
        old_doc = "x" * 100
        store.synchronize(
            SyncEvent("medical-update", {"documents": [
                {"source_id": "doc1", "kind": "textbook", "text": old_doc}]}),
            policy=self.policy)
        old_count = len(store.chunks_for_source("doc1"))
        report = store.synchronize(
            SyncEvent("medical-update", {"documents": [
                {"source_id": "doc1", "kind": "textbook", "text": "y" * 100}]}),
            policy=self.policy)
        assert report.replaced == old_count
        assert len(store.chunks_for_source("doc1")) == old_count

    def test_sensor_event_empty_window(self):
        store = fresh_store()
        report = store.synchronize(
            SyncEvent("sensor-hourly", {"window": None}),
            policy=self.policy, sensor_resolver=lambda payload: [])
        assert report.added == 0 and report.replaced == 0

    def test_sync_locality_other_vectors_untouched(self):
        store = fresh_store()
        store.synchronize(
            SyncEvent("medical-update", {"documents": [
                {"source_id": "stable", "kind": "textbook", "text": "s" * 80},
                {"source_id": "volatile", "kind": "textbook", "text": "v" * 80}]}),
            policy=self.policy)
        before = {c.id: store.vector_for(c.id) for c in store.chunks_for_source("stable")}
        store.synchronize(
            SyncEvent("medical-update", {"documents": [
                {"source_id": "volatile", "kind": "textbook", "text": "w" * 80}]}),
            policy=self.policy)
        after = {c.id: store.vector_for(c.id) for c in store.chunks_for_source("stable")}
        assert before.keys() == after.keys()
        for cid in before:
            assert np.array_equal(before[cid], after[cid])

    def test_unresolvable_payload_no_mutation(self):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["existing"]))
        with pytest.raises(VectorStoreError):
            store.synchronize(SyncEvent("medical-update", {"documents": [{"bogus": 1}]}),
                              policy=self.policy)
        assert len(store) == 1


# -- persistence ---------------------------------------------------------------------

class TestPersistence:
    def test_snapshot_roundtrip(self, tmp_path):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["alpha beta", "gamma delta"]))
        snap = tmp_path / "kb.snapshot.json"
        store.save_snapshot(snap)
        restored = VectorStore.load_snapshot(snap, MockGateway().embedder)
        assert len(restored) == 2
        assert [h.chunk_id for h in restored.query("alpha beta", k=1)] == [0]

    def test_log_replay_after_snapshot(self, tmp_path):
        store = fresh_store()
        store.upsert_chunks(make_chunks(["first doc here"]))
        snap, log = tmp_path / "kb.snapshot.json", tmp_path / "kb.log.jsonl"
        store.save_snapshot(snap)
        ids = store.upsert_chunks(make_chunks(["second doc text"], source="later"))
        store.append_log(log, [store.get_chunk(ids[0])])
        restored = VectorStore.load_snapshot(snap, MockGateway().embedder, log_path=log)
        assert len(restored) == 2
        assert restored.query("second doc text", k=1)[0].similarity == pytest.approx(1.0)
