"""Clients: fingerprint stability, cassette record/replay, live retries."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from selfexam.errors import ReplayMissError, TransportError
from selfexam.llm_client import (
    Cassette,
    LiveClient,
    ModelConfig,
    RecordingClient,
    ReplayClient,
    TokenBucket,
    canonical_request,
    request_fingerprint,
)
from selfexam.prompting import Conversation

CONV = Conversation(turns=(("system", "be brief"), ("user", "say hi")))


def _config(**overrides) -> ModelConfig:
    defaults = dict(
        endpoint_url="http://127.0.0.1:1/chat",
        model_name="test-model",
        temperature=0.0,
        max_tokens=64,
        request_timeout=2.0,
        max_retries=2,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


# --- fingerprints ------------------------------------------------------------


def test_fingerprint_is_stable_and_frozen():
    fp = request_fingerprint(_config(), CONV)
    # Frozen value: guards the canonical serialization against drift.
    assert fp == "5c087f8d831e726be9104cb6cdbfb6c5e12b8864ee7f5f2b772611008eb4f27e"
    assert fp == request_fingerprint(_config(), CONV)


def test_fingerprint_depends_on_model_temperature_and_content():
    base = request_fingerprint(_config(), CONV)
    assert request_fingerprint(_config(model_name="other"), CONV) != base
    assert request_fingerprint(_config(temperature=0.7), CONV) != base
    other = Conversation(turns=(("system", "be brief"), ("user", "say bye")))
    assert request_fingerprint(_config(), other) != base


def test_model_config_invariants():
    with pytest.raises(ValueError):
        _config(temperature=-0.1)
    with pytest.raises(ValueError):
        _config(max_retries=-1)


# --- cassettes ---------------------------------------------------------------


def test_cassette_record_and_replay(tmp_path):
    path = tmp_path / "cassette.jsonl"
    cassette = Cassette.open_for_recording(path)
    config = _config()
    fp = request_fingerprint(config, CONV)
    cassette.record(fp, canonical_request(config, CONV), "hello there")

    replay = ReplayClient(config, Cassette.load(path))
    assert replay.complete(CONV) == "hello there"

    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert lines[0]["fingerprint"] == fp
    assert set(lines[0]) == {"fingerprint", "request", "response", "timestamp"}


def test_replay_miss_is_a_hard_error(tmp_path):
    path = tmp_path / "cassette.jsonl"
    path.write_text("", encoding="utf-8")
    replay = ReplayClient(_config(), Cassette.load(path))
    fp = replay.fingerprint(CONV)
    with pytest.raises(ReplayMissError, match=fp):
        replay.complete(CONV)


def test_cassette_first_occurrence_wins(tmp_path):
    path = tmp_path / "cassette.jsonl"
    fp = "a" * 64
    with path.open("w") as fh:
        for response in ("first", "second"):
            fh.write(json.dumps({"fingerprint": fp, "request": {}, "response": response}) + "\n")
    assert Cassette.load(path).lookup(fp) == "first"


def test_cassette_record_skips_duplicates(tmp_path):
    path = tmp_path / "cassette.jsonl"
    cassette = Cassette.open_for_recording(path)
    cassette.record("f" * 64, {}, "one")
    cassette.record("f" * 64, {}, "two")
    assert len(path.read_text().splitlines()) == 1
    assert cassette.lookup("f" * 64) == "one"


# --- token bucket ------------------------------------------------------------


def test_token_bucket_spaces_requests():
    now = [0.0]
    naps: list[float] = []

    def clock():
        return now[0]

    def sleep(duration):
        naps.append(duration)
        now[0] += duration

    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=clock, sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    bucket.acquire()
    assert naps == pytest.approx([0.5, 0.5])


# --- live client against a scripted local stub -------------------------------


class _ScriptedHandler(BaseHTTPRequestHandler):
    script: list[tuple[int, str]] = []
    requests_seen: list[dict] = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        type(self).requests_seen.append(json.loads(body))
        status, text = self.script.pop(0) if self.script else (200, "default")
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]})
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload.encode() if status == 200 else b"server exploded")

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ScriptedHandler.script = []
    _ScriptedHandler.requests_seen = []
    yield server
    server.shutdown()
    thread.join()


def _live(server, **overrides) -> LiveClient:
    url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    config = _config(endpoint_url=url, **overrides)
    return LiveClient(config, rate_limit=10_000.0, sleep=lambda s: None)


def test_live_retries_transient_500s(stub_server):
    # Scripted: 500, 500, then 200 with body B -> B after exactly 2 retries.
    _ScriptedHandler.script = [(500, ""), (500, ""), (200, "body B")]
    client = _live(stub_server, max_retries=2)
    assert client.complete(CONV) == "body B"
    assert len(_ScriptedHandler.requests_seen) == 3


def test_live_gives_up_after_max_retries(stub_server):
    _ScriptedHandler.script = [(500, ""), (500, "")]
    client = _live(stub_server, max_retries=1)
    with pytest.raises(TransportError, match="HTTP 500"):
        client.complete(CONV)


def test_live_does_not_retry_client_errors(stub_server):
    _ScriptedHandler.script = [(404, "")]
    client = _live(stub_server, max_retries=3)
    with pytest.raises(TransportError, match="HTTP 404"):
        client.complete(CONV)
    assert len(_ScriptedHandler.requests_seen) == 1


def test_live_sends_wire_format(stub_server):
    _ScriptedHandler.script = [(200, "ok")]
    client = _live(stub_server)
    client.complete(CONV)
    request = _ScriptedHandler.requests_seen[0]
    assert request["model"] == "test-model"
    assert request["temperature"] == 0.0
    assert request["max_tokens"] == 64
    assert request["messages"] == CONV.as_messages()


def test_recording_client_round_trip(stub_server, tmp_path):
    _ScriptedHandler.script = [(200, "recorded answer")]
    cassette_path = tmp_path / "c.jsonl"
    live = _live(stub_server)
    recorder = RecordingClient(live, Cassette.open_for_recording(cassette_path))
    assert recorder.complete(CONV) == "recorded answer"
    # Second call is served from the cassette: no new HTTP request.
    assert recorder.complete(CONV) == "recorded answer"
    assert len(_ScriptedHandler.requests_seen) == 1

    replay = ReplayClient(live.config, Cassette.load(cassette_path))
    assert replay.complete(CONV) == "recorded answer"
