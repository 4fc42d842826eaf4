"""Chunking, embedding, persistence, and exhaustive cosine search.

Desk-scale knowledge store: documents are split by a sliding window, embedded
through the gateway, and searched by brute-force cosine (no ANN index).
Synchronization is event-driven: hourly sensor events and medical-update
events re-embed only the content named in the event payload.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import ChunkPolicy

CHUNK_KINDS = ("textbook", "dialogue", "sensor", "guideline-aux")

SNAPSHOT_VERSION = 1


class VectorStoreError(Exception):
    pass


class DimensionMismatchError(VectorStoreError):
    pass


@dataclass
class Chunk:
    """One embedded span of a source document. `id` is assigned by the store."""

    id: int
    source_id: str
    text: str
    span: tuple[int, int]
    kind: str

    def __post_init__(self):
        start, end = self.span
        if end <= start:
            raise ValueError(f"span end must exceed start, got {self.span}")
        if self.kind not in CHUNK_KINDS:
            raise ValueError(f"unknown chunk kind {self.kind!r}")


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: int
    similarity: float
    rank: int


@dataclass
class SyncEvent:
    """`sensor-hourly` payloads carry a time window; `medical-update`
    payloads carry the document set to re-chunk."""

    kind: str  # sensor-hourly | medical-update
    payload: dict

    def __post_init__(self):
        if self.kind not in ("sensor-hourly", "medical-update"):
            raise ValueError(f"unknown sync event kind {self.kind!r}")


@dataclass
class SyncReport:
    added: int
    replaced: int
    elapsed: float


def chunk_document(doc: str, policy: ChunkPolicy, *, source_id: str = "doc",
                   kind: str = "textbook") -> list[Chunk]:
    """Split `doc` into overlapping chunks with stride chunk_size - overlap.

    Returned chunks have id -1 (assigned on upsert). The last chunk may be
    shorter than chunk_size but is never empty; an empty document yields an
    empty list. Stripping the first `overlap` characters of every chunk
    after the first and concatenating reconstructs the document.
    """
    if not doc:
        return []
    chunks = []
    for start in range(0, len(doc), policy.stride):
        end = min(start + policy.chunk_size, len(doc))
        chunks.append(Chunk(id=-1, source_id=source_id, text=doc[start:end],
                            span=(start, end), kind=kind))
    return chunks


@dataclass
class _Snapshot:
    """Immutable query state, swapped atomically on every mutation."""

    ids: tuple[int, ...]
    matrix: np.ndarray  # rows L2-normalized; zero rows stay zero


class VectorStore:
    """Exhaustive-scan vector store with event-driven synchronization.

    Concurrency: mutations serialize on an internal lock and finish by
    swapping in a fresh immutable snapshot; queries read whichever snapshot
    is current and never observe a torn state.
    """

    def __init__(self, embedder, dim: Optional[int] = None):
        self.embedder = embedder
        self.dim = dim
        self._chunks: dict[int, Chunk] = {}
        self._vectors: dict[int, np.ndarray] = {}
        self._by_key: dict[tuple[str, tuple[int, int]], int] = {}
        self._next_id = 0
        self._lock = threading.RLock()
        self._snapshot = _Snapshot(ids=(), matrix=np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self._chunks)

    # -- mutation ----------------------------------------------------------

    def upsert_chunks(self, chunks: Sequence[Chunk]) -> list[int]:
        """Embed and store chunks; identical (source_id, span) replaces in place.

        Embedding runs before any mutation, so an embedder failure leaves the
        store unchanged and surfaces the failing chunk index.
        """
        if not chunks:
            return []
        for i, chunk in enumerate(chunks):
            if not chunk.text:
                raise ValueError(f"chunk {i} has empty text")
        try:
            vectors = self.embedder.embed([c.text for c in chunks])
        except Exception as exc:
            index = self._isolate_failing_chunk(chunks)
            raise VectorStoreError(
                f"embedding failed at chunk index {index} "
                f"(source={chunks[index].source_id!r}, batch of {len(chunks)}): "
                f"{exc}") from exc
        if len(vectors) != len(chunks):
            raise VectorStoreError(
                f"embedder returned {len(vectors)} vectors for {len(chunks)} chunks")

        return self._commit(chunks, vectors)

    def _isolate_failing_chunk(self, chunks: Sequence[Chunk]) -> int:
        """After a batch embed failure, find which chunk is to blame."""
        for i, chunk in enumerate(chunks):
            try:
                self.embedder.embed([chunk.text])
            except Exception:
                return i
        return 0  # whole-batch failure (provider down); report the head

    def _commit(self, chunks: Sequence[Chunk], vectors) -> list[int]:
        with self._lock:
            # validate the whole batch before touching any state
            arrays = []
            dim = self.dim
            for i, vec in enumerate(vectors):
                arr = np.asarray(vec, dtype=np.float64)
                if not np.all(np.isfinite(arr)):
                    raise VectorStoreError(f"chunk {i} embedded to a non-finite vector")
                if dim is None:
                    dim = arr.shape[0]
                elif arr.shape[0] != dim:
                    raise DimensionMismatchError(
                        f"chunk {i} has dim {arr.shape[0]}, store dim {dim}")
                arrays.append(arr)

            self.dim = dim
            ids = []
            for chunk, arr in zip(chunks, arrays):
                key = (chunk.source_id, chunk.span)
                if key in self._by_key:
                    cid = self._by_key[key]
                else:
                    cid = self._next_id
                    self._next_id += 1
                    self._by_key[key] = cid
                stored = Chunk(id=cid, source_id=chunk.source_id, text=chunk.text,
                               span=chunk.span, kind=chunk.kind)
                self._chunks[cid] = stored
                self._vectors[cid] = arr
                ids.append(cid)
            self._rebuild_snapshot()
            return ids

    def remove_source(self, source_id: str) -> int:
        with self._lock:
            victims = [cid for cid, c in self._chunks.items() if c.source_id == source_id]
            for cid in victims:
                chunk = self._chunks.pop(cid)
                self._vectors.pop(cid)
                self._by_key.pop((chunk.source_id, chunk.span), None)
            if victims:
                self._rebuild_snapshot()
            return len(victims)

    def _rebuild_snapshot(self) -> None:
        ids = tuple(sorted(self._chunks))
        if not ids:
            self._snapshot = _Snapshot(ids=(), matrix=np.zeros((0, self.dim or 0)))
            return
        matrix = np.stack([self._vectors[cid] for cid in ids])
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        self._snapshot = _Snapshot(ids=ids, matrix=matrix / norms)

    # -- query ---------------------------------------------------------------

    def query(self, text: str, k: int, threshold: float = -1.0, *,
              kind: Optional[str] = None,
              source_prefix: Optional[str] = None) -> list[RetrievalHit]:
        """Top-k chunks by cosine similarity, ties broken by ascending id.

        Only hits with similarity >= threshold are returned. `kind` and
        `source_prefix` restrict the candidate set before ranking.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        snap = self._snapshot
        if not snap.ids:
            return []
        vec = np.asarray(self.embedder.embed([text])[0], dtype=np.float64)
        if vec.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"query dim {vec.shape[0]} != store dim {self.dim}")
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        sims = snap.matrix @ vec

        candidates = []
        for idx, cid in enumerate(snap.ids):
            if kind is not None and self._chunks[cid].kind != kind:
                continue
            if source_prefix is not None and not self._chunks[cid].source_id.startswith(source_prefix):
                continue
            sim = float(sims[idx])
            if sim >= threshold:
                candidates.append((cid, sim))
        candidates.sort(key=lambda pair: (-pair[1], pair[0]))
        return [RetrievalHit(chunk_id=cid, similarity=sim, rank=r + 1)
                for r, (cid, sim) in enumerate(candidates[:k])]

    def get_chunk(self, chunk_id: int) -> Chunk:
        return self._chunks[chunk_id]

    def chunks_for_source(self, source_id: str) -> list[Chunk]:
        return sorted((c for c in self._chunks.values() if c.source_id == source_id),
                      key=lambda c: c.span)

    def vector_for(self, chunk_id: int) -> np.ndarray:
        return np.array(self._vectors[chunk_id])

    def all_chunks(self) -> list[Chunk]:
        return [self._chunks[cid] for cid in sorted(self._chunks)]

    # -- synchronization ------------------------------------------------------

    def ingest_document(self, source_id: str, text: str, kind: str,
                        policy: ChunkPolicy) -> tuple[int, int]:
        """Replace all chunks of `source_id` with a fresh chunking of `text`.

        Returns (added, replaced): replaced counts the chunks the source had
        before the call, added counts net-new chunks beyond those.
        """
        with self._lock:
            old = len(self.chunks_for_source(source_id))
            chunks = chunk_document(text, policy, source_id=source_id, kind=kind)
            old_keys = {(c.source_id, c.span) for c in self.chunks_for_source(source_id)}
            new_keys = {(c.source_id, c.span) for c in chunks}
            for key in old_keys - new_keys:
                cid = self._by_key.pop(key)
                self._chunks.pop(cid)
                self._vectors.pop(cid)
            self.upsert_chunks(chunks)
            new = len(chunks)
            return max(new - old, 0), old

    def synchronize(self, event: SyncEvent, *, policy: ChunkPolicy,
                    sensor_resolver: Optional[Callable[[dict], Iterable[tuple[str, str]]]] = None
                    ) -> SyncReport:
        """Apply one sync event; content outside the payload is untouched.

        medical-update: payload {"documents": [{"source_id", "kind", "text"}]}
        re-chunks and re-embeds exactly those documents.

        sensor-hourly: payload carries a time window; `sensor_resolver` turns
        it into (source_id, text) window docs to (re-)embed under kind sensor.
        """
        t0 = time.perf_counter()
        added = replaced = 0
        with self._lock:
            if event.kind == "medical-update":
                docs = event.payload.get("documents")
                if docs is None:
                    raise VectorStoreError("medical-update payload missing 'documents'")
                for doc in docs:
                    try:
                        source_id, kind, text = doc["source_id"], doc["kind"], doc["text"]
                    except (KeyError, TypeError) as exc:
                        raise VectorStoreError(f"unresolvable document payload: {doc!r}") from exc
                    a, r = self.ingest_document(source_id, text, kind, policy)
                    added += a
                    replaced += r
            else:  # sensor-hourly
                if sensor_resolver is None:
                    raise VectorStoreError("sensor-hourly event needs a sensor_resolver")
                for source_id, text in sensor_resolver(event.payload):
                    had = len(self.chunks_for_source(source_id))
                    chunks = chunk_document(text, policy, source_id=source_id, kind="sensor")
                    self.upsert_chunks(chunks)
                    if had:
                        replaced += had
                        added += max(len(chunks) - had, 0)
                    else:
                        added += len(chunks)
        return SyncReport(added=added, replaced=replaced,
                          elapsed=time.perf_counter() - t0)

    # -- persistence -----------------------------------------------------------
    #
    # Layout: an append-only record log (one JSON line per upsert batch) plus
    # a versioned snapshot holding the full chunk + vector state. `load`
    # restores the snapshot, then replays any log records appended after it.

    def save_snapshot(self, path: str | Path) -> None:
        with self._lock:
            state = {
                "version": SNAPSHOT_VERSION,
                "dim": self.dim,
                "next_id": self._next_id,
                "chunks": [
                    {"id": c.id, "source_id": c.source_id, "text": c.text,
                     "span": list(c.span), "kind": c.kind,
                     "vector": self._vectors[c.id].tolist()}
                    for c in self.all_chunks()
                ],
            }
        Path(path).write_text(json.dumps(state), encoding="utf-8")

    def append_log(self, path: str | Path, chunks: Sequence[Chunk]) -> None:
        record = {
            "ts": time.time(),
            "chunks": [
                {"id": c.id, "source_id": c.source_id, "text": c.text,
                 "span": list(c.span), "kind": c.kind,
                 "vector": self._vectors[c.id].tolist()}
                for c in chunks
            ],
        }
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    @classmethod
    def load_snapshot(cls, path: str | Path, embedder,
                      log_path: Optional[str | Path] = None) -> "VectorStore":
        state = json.loads(Path(path).read_text(encoding="utf-8"))
        if state.get("version") != SNAPSHOT_VERSION:
            raise VectorStoreError(
                f"snapshot version {state.get('version')} unsupported "
                f"(expected {SNAPSHOT_VERSION})")
        store = cls(embedder, dim=state["dim"])
        records = list(state["chunks"])
        if log_path and Path(log_path).exists():
            with open(log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        records.extend(json.loads(line)["chunks"])
        with store._lock:
            for rec in records:
                chunk = Chunk(id=rec["id"], source_id=rec["source_id"], text=rec["text"],
                              span=tuple(rec["span"]), kind=rec["kind"])
                store._chunks[chunk.id] = chunk
                store._vectors[chunk.id] = np.asarray(rec["vector"], dtype=np.float64)
                store._by_key[(chunk.source_id, chunk.span)] = chunk.id
            store._next_id = max(state["next_id"],
                                 max(store._chunks, default=-1) + 1)
            store._rebuild_snapshot()
        return store
