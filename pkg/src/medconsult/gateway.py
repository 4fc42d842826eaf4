"""Chat-completion and text-embedding provider abstraction.

Two implementations share one interface: `RemoteGateway` speaks the
OpenAI-compatible REST wire format over HTTP, and `MockGateway` is fully
deterministic for offline runs and tests (scripted chat replies plus a
token-hash embedder). Role routing is uniform: callers name a role
(doctor / summarizer / augmenter / embedder) and the profile maps it to a
model name, so the summarizer can run on a cheaper tier than the doctor.
"""

from __future__ import annotations

import hashlib
import math
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

ROLES = ("doctor", "summarizer", "augmenter", "embedder")


class GatewayError(Exception):
    """Base class for provider failures."""


class TransportError(GatewayError):
    """HTTP/timeout failure that survived the retry policy."""


class EmbeddingError(GatewayError):
    """Embedding call failed or returned vectors of the wrong shape."""


class ScriptedMismatchError(GatewayError):
    """Strict mock received a request no script entry matches."""


@dataclass
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def to_wire(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest requires at least one message")

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role == "user":
                return msg.content
        return self.messages[-1].content

    def full_text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass
class ChatReply:
    text: str
    model: str = ""
    usage: dict = field(default_factory=dict)


@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff_base: float = 0.25  # seconds; doubles per attempt


@dataclass
class ProviderProfile:
    """Where to send each role's traffic."""

    endpoint: str = ""
    credential_env: str = "MEDCONSULT_API_KEY"
    models: dict[str, str] = field(default_factory=lambda: {
        "doctor": "doctor-model",
        "summarizer": "summarizer-model",
        "augmenter": "augmenter-model",
        "embedder": "embedder-model",
    })
    timeout: float = 30.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def model_for(self, role: str) -> str:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}, expected one of {ROLES}")
        try:
            return self.models[role]
        except KeyError:
            raise ValueError(f"profile has no model for role {role!r}") from None


# ---------------------------------------------------------------------------
# Deterministic mock embedder
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashEmbedder:
    """Token-hash embedding: stable across runs and processes.

    Each lowercase token hashes (md5) into one of `dim` buckets; the bucket
    counts are L2-normalized. Identical texts therefore map to identical
    vectors, and texts sharing tokens score higher cosine similarity than
    unrelated texts.
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def embed_one(self, text: str) -> list[float]:
        counts = [0.0] * self.dim
        for token in _TOKEN_RE.findall(text.lower()):
            counts[self._bucket(token)] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        if norm == 0.0:
            return counts
        return [c / norm for c in counts]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        return [self.embed_one(t) for t in texts]


# ---------------------------------------------------------------------------
# Scripted chat
# ---------------------------------------------------------------------------

Matcher = Optional[Callable[[ChatRequest], bool] | str]


@dataclass
class ScriptEntry:
    matcher: Matcher  # None = match anything; str = substring of request text
    reply: str
    consumed: bool = False

    def matches(self, request: ChatRequest) -> bool:
        if self.matcher is None:
            return True
        if isinstance(self.matcher, str):
            return self.matcher in request.full_text()
        return bool(self.matcher(request))


class ScriptedTranscript:
    """Ordered (matcher, reply) script for mock chat.

    Each request consumes the first unconsumed entry whose matcher accepts
    it. In strict mode an unmatched request raises ScriptedMismatchError
    with a diff of what was expected; otherwise `default_reply` is returned.
    """

    def __init__(self, entries: Sequence[tuple[Matcher, str]], strict: bool = True,
                 default_reply: str = "Understood."):
        self.entries = [ScriptEntry(m, r) for m, r in entries]
        self.strict = strict
        self.default_reply = default_reply

    def __call__(self, request: ChatRequest) -> str:
        for entry in self.entries:
            if not entry.consumed and entry.matches(request):
                entry.consumed = True
                return entry.reply
        if self.strict:
            pending = [
                e.matcher if isinstance(e.matcher, str) else repr(e.matcher)
                for e in self.entries if not e.consumed
            ]
            raise ScriptedMismatchError(
                "no script entry matched request.\n"
                f"--- request tail ---\n{request.full_text()[-400:]}\n"
                f"--- unconsumed matchers ---\n{pending}"
            )
        return self.default_reply

    @property
    def exhausted(self) -> bool:
        return all(e.consumed for e in self.entries)


# Deterministic paraphrase templates for offline augmenter runs: synonym
# pairs are swapped in both directions, then a sentence frame (keyed by
# input hash) rewraps the question.
_SYNONYM_PAIRS = [
    ("heart rate", "pulse"),
    ("oxygen saturation", "blood oxygen"),
    ("spo2", "blood oxygen level"),
    ("sleep score", "sleep quality"),
    ("step count", "daily steps"),
    ("stress score", "stress level"),
    ("past week", "last seven days"),
    ("current", "latest"),
    ("tell me", "share"),
    ("medicine", "medication"),
    ("hurt", "ache"),
]

_PARAPHRASE_FRAMES = [
    "Could you {q}",
    "I would like to know: {q}",
    "{q} Please be specific.",
]


def paraphrase_handler(request: ChatRequest) -> str:
    """Rewrite the query in the last user message, deterministically."""
    query = request.last_user_content()
    rewritten = query.lower()
    for i, (a, b) in enumerate(_SYNONYM_PAIRS):
        marker = f"\x00{i}\x00"
        rewritten = rewritten.replace(a, marker).replace(b, a).replace(marker, b)
    frame = _PARAPHRASE_FRAMES[
        int(hashlib.md5(query.encode("utf-8")).hexdigest(), 16) % len(_PARAPHRASE_FRAMES)
    ]
    return frame.format(q=rewritten.strip())


# ---------------------------------------------------------------------------
# Gateways
# ---------------------------------------------------------------------------

class Gateway:
    """Uniform surface: chat by role, embed texts."""

    profile: ProviderProfile

    def chat(self, role: str, request: ChatRequest) -> ChatReply:
        raise NotImplementedError

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        raise NotImplementedError

    def simple_chat(self, role: str, system: str, user: str) -> str:
        messages = []
        if system:
            messages.append(ChatMessage("system", system))
        messages.append(ChatMessage("user", user))
        return self.chat(role, ChatRequest(messages=messages)).text


ChatHandler = Callable[[ChatRequest], str]


class MockGateway(Gateway):
    """Deterministic local provider for tests and offline runs.

    `handlers` maps a role to either a ScriptedTranscript or any callable
    taking a ChatRequest and returning the reply text. Requests are recorded
    on `calls` so tests can assert on role/model routing.
    """

    def __init__(self, handlers: Optional[dict[str, ChatHandler]] = None,
                 embed_dim: int = 256,
                 profile: Optional[ProviderProfile] = None):
        # the augmenter ships a deterministic default so offline training
        # runs work out of the box; callers override per role as needed
        self.handlers: dict[str, ChatHandler] = {"augmenter": paraphrase_handler}
        self.handlers.update(handlers or {})
        self.embedder = HashEmbedder(embed_dim)
        self.profile = profile or ProviderProfile(endpoint="mock://local")
        self.calls: list[tuple[str, str, ChatRequest]] = []  # (role, model, request)
        self.embed_calls: int = 0

    def set_handler(self, role: str, handler: ChatHandler) -> None:
        self.handlers[role] = handler

    def chat(self, role: str, request: ChatRequest) -> ChatReply:
        model = self.profile.model_for(role)
        if not request.model:
            request.model = model
        self.calls.append((role, model, request))
        handler = self.handlers.get(role)
        if handler is None:
            raise ScriptedMismatchError(f"no mock handler configured for role {role!r}")
        text = handler(request)
        return ChatReply(text=text, model=model,
                         usage={"prompt_tokens": len(request.full_text().split()),
                                "completion_tokens": len(text.split())})

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        self.embed_calls += 1
        return self.embedder.embed(texts)


class FailingEmbedder:
    """Test helper: always raises, for fail-open paths."""

    def embed(self, texts):
        raise EmbeddingError("embedder forced to fail")


class RemoteGateway(Gateway):
    """OpenAI-compatible HTTP client with retry policy.

    POSTs JSON to {endpoint}/chat/completions and {endpoint}/embeddings.
    Retries only idempotent requests (all of ours run at temperature 0)
    with exponential backoff, then raises TransportError.
    """

    def __init__(self, profile: ProviderProfile, api_key: str = "",
                 sleep: Callable[[float], None] = time.sleep):
        import httpx

        self.profile = profile
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = api_key
        if not key:
            import os
            key = os.environ.get(profile.credential_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(base_url=profile.endpoint, headers=headers,
                                    timeout=profile.timeout)

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        policy = self.profile.retry
        last_exc: Exception | None = None
        for attempt in range(policy.attempts):
            try:
                resp = self._client.post(path, json=payload)
                if resp.status_code >= 500:
                    last_exc = TransportError(f"{path} -> HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise TransportError(
                        f"{path} -> HTTP {resp.status_code}: {resp.text[:300]}")
                else:
                    return resp.json()
            except TransportError:
                raise
            except httpx.HTTPError as exc:
                last_exc = exc
            if attempt + 1 < policy.attempts:
                self._sleep(policy.backoff_base * (2 ** attempt))
        raise TransportError(f"{path} failed after {policy.attempts} attempts: {last_exc}")

    def chat(self, role: str, request: ChatRequest) -> ChatReply:
        model = request.model or self.profile.model_for(role)
        payload: dict[str, Any] = {
            "model": model,
            "messages": [m.to_wire() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        body = self._post("/chat/completions", payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat completion body: {body!r}") from exc
        return ChatReply(text=text, model=body.get("model", model),
                         usage=body.get("usage", {}))

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed_texts requires at least one text")
        payload = {"model": self.profile.model_for("embedder"), "input": list(texts)}
        body = self._post("/embeddings", payload)
        try:
            data = sorted(body["data"], key=lambda d: d["index"])
            vectors = [d["embedding"] for d in data]
        except (KeyError, TypeError) as exc:
            raise EmbeddingError(f"malformed embeddings body: {body!r}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingError(
                f"expected {len(texts)} vectors, got {len(vectors)}")
        return vectors

    def close(self) -> None:
        self._client.close()
