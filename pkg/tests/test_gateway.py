"""Gateway tests: mock determinism, script matching, wire conformance."""

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from medconsult.gateway import (
    ChatMessage,
    ChatRequest,
    HashEmbedder,
    MockGateway,
    ProviderProfile,
    RemoteGateway,
    RetryPolicy,
    ScriptedMismatchError,
    ScriptedTranscript,
    TransportError,
    paraphrase_handler,
)


def cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    den = math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b))
    return num / den if den else 0.0


def make_request(text: str) -> ChatRequest:
    return ChatRequest(messages=[ChatMessage("user", text)])


class TestHashEmbedder:
    def test_same_text_same_vector(self):
        emb = HashEmbedder(256)
        v1, v2 = emb.embed(["heart rate sleep", "heart rate sleep"])
        assert v1 == v2

    def test_token_overlap_orders_cosine(self):
        emb = HashEmbedder(256)
        a, b, c = emb.embed(["heart rate sleep", "heart rate", "weather tomorrow"])
        assert cosine(a, b) > cosine(a, c)

    def test_unit_norm(self):
        emb = HashEmbedder(64)
        (v,) = emb.embed(["some words here"])
        assert abs(math.sqrt(sum(x * x for x in v)) - 1.0) < 1e-12

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            HashEmbedder().embed([])


class TestScriptedChat:
    def test_single_canned_reply_byte_for_byte(self):
        script = ScriptedTranscript([(None, "Take two aspirin.\nACTION: DIAGNOSE")])
        gw = MockGateway(handlers={"doctor": script})
        reply = gw.chat("doctor", make_request("I have a headache"))
        assert reply.text == "Take two aspirin.\nACTION: DIAGNOSE"

    def test_strict_mismatch_raises_with_diff(self):
        script = ScriptedTranscript([("fever", "ok")], strict=True)
        gw = MockGateway(handlers={"doctor": script})
        with pytest.raises(ScriptedMismatchError) as err:
            gw.chat("doctor", make_request("no match here"))
        assert "unconsumed" in str(err.value)

    def test_matchers_consume_in_order(self):
        script = ScriptedTranscript([(None, "first"), (None, "second")])
        gw = MockGateway(handlers={"doctor": script})
        assert gw.chat("doctor", make_request("a")).text == "first"
        assert gw.chat("doctor", make_request("b")).text == "second"
        assert script.exhausted

    def test_callable_matcher_branches(self):
        script = ScriptedTranscript([
            (lambda req: "UNRELIABLE" in req.full_text(), "get a lab test"),
            (None, "sensor looks fine"),
        ])
        gw = MockGateway(handlers={"doctor": script})
        assert gw.chat("doctor", make_request("data UNRELIABLE today")).text == "get a lab test"
        assert gw.chat("doctor", make_request("all good")).text == "sensor looks fine"

    def test_role_routing_model_names(self):
        gw = MockGateway(handlers={
            "doctor": lambda req: "doc",
            "summarizer": lambda req: "sum",
        })
        gw.chat("doctor", make_request("x"))
        gw.chat("summarizer", make_request("y"))
        doctor_models = {m for role, m, _ in gw.calls if role == "doctor"}
        summarizer_models = {m for role, m, _ in gw.calls if role == "summarizer"}
        assert doctor_models == {"doctor-model"}
        assert summarizer_models == {"summarizer-model"}
        assert doctor_models.isdisjoint(summarizer_models)

    def test_paraphrase_is_deterministic_and_different(self):
        req = make_request("Can you tell me your current heart rate?")
        first = paraphrase_handler(req)
        second = paraphrase_handler(make_request("Can you tell me your current heart rate?"))
        assert first == second
        assert first != req.last_user_content()
        assert "pulse" in first  # synonym substitution applied


# ---------------------------------------------------------------------------
# Loopback stub server: OpenAI-compatible endpoints that echo the last user
# message, used to exercise the remote client without any external network.
# ---------------------------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    fail_first = 0  # class-level: number of 500s to serve before succeeding

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if _StubHandler.fail_first > 0:
            _StubHandler.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        if self.path.endswith("/chat/completions"):
            last_user = [m for m in body["messages"] if m["role"] == "user"][-1]["content"]
            payload = {
                "id": "cmpl-stub",
                "object": "chat.completion",
                "model": body["model"],
                "choices": [{"index": 0, "finish_reason": "stop",
                             "message": {"role": "assistant", "content": last_user}}],
                "usage": {"prompt_tokens": 1, "completion_tokens": 1, "total_tokens": 2},
            }
        elif self.path.endswith("/embeddings"):
            payload = {
                "object": "list",
                "model": body["model"],
                "data": [{"object": "embedding", "index": i, "embedding": [1.0, 0.0]}
                         for i, _ in enumerate(body["input"])],
                "usage": {"prompt_tokens": 1, "total_tokens": 1},
            }
        else:
            self.send_response(404)
            self.end_headers()
            return
        raw = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.fail_first = 0
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestRemoteGateway:
    def test_echo_roundtrip(self, stub_server):
        gw = RemoteGateway(ProviderProfile(endpoint=stub_server), api_key="test-key")
        reply = gw.chat("doctor", make_request("echo me back"))
        assert reply.text == "echo me back"
        gw.close()

    def test_embeddings_roundtrip(self, stub_server):
        gw = RemoteGateway(ProviderProfile(endpoint=stub_server), api_key="k")
        vectors = gw.embed_texts(["a", "b"])
        assert vectors == [[1.0, 0.0], [1.0, 0.0]]
        gw.close()

    def test_retries_then_succeeds(self, stub_server):
        _StubHandler.fail_first = 2
        slept = []
        gw = RemoteGateway(
            ProviderProfile(endpoint=stub_server, retry=RetryPolicy(attempts=3)),
            api_key="k", sleep=slept.append)
        reply = gw.chat("doctor", make_request("persist"))
        assert reply.text == "persist"
        assert slept == [0.25, 0.5]  # exponential backoff
        gw.close()

    def test_exhausted_retries_raise_transport_error(self, stub_server):
        _StubHandler.fail_first = 10
        gw = RemoteGateway(
            ProviderProfile(endpoint=stub_server, retry=RetryPolicy(attempts=3)),
            api_key="k", sleep=lambda s: None)
        with pytest.raises(TransportError):
            gw.chat("doctor", make_request("doomed"))
        gw.close()


class TestWireConformance:
    """Requests must match the OpenAI-compatible schema field for field."""

    def test_chat_request_golden(self, stub_server):
        captured = {}

        class CapturingHandler(_StubHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                captured["body"] = json.loads(self.rfile.read(length))
                captured["path"] = self.path
                super_body = {
                    "model": "m", "choices": [{"index": 0, "message": {
                        "role": "assistant", "content": "ok"}}], "usage": {}}
                raw = json.dumps(super_body).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        server = HTTPServer(("127.0.0.1", 0), CapturingHandler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            profile = ProviderProfile(endpoint=f"http://127.0.0.1:{server.server_port}",
                                      models={"doctor": "gpt-doctor", "summarizer": "s",
                                              "augmenter": "a", "embedder": "e"})
            gw = RemoteGateway(profile, api_key="k")
            gw.chat("doctor", ChatRequest(
                messages=[ChatMessage("system", "sys"), ChatMessage("user", "hi")],
                temperature=0.0, max_tokens=99, seed=7))
            gw.close()
        finally:
            server.shutdown()

        assert captured["path"] == "/chat/completions"
        assert captured["body"] == {
            "model": "gpt-doctor",
            "messages": [{"role": "system", "content": "sys"},
                         {"role": "user", "content": "hi"}],
            "temperature": 0.0,
            "max_tokens": 99,
            "seed": 7,
        }
