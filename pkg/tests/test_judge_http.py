import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from calreason.errors import JudgeResponseMalformed, JudgeUnavailable
from calreason.grammar import ArtifactSpan, DIMENSIONS, render_reference_texts, render_summary
from calreason.rewards import (
    JUDGE_LABELS,
    JudgeClient,
    JudgeConfig,
    RewardEngine,
    mock_judge_labels,
    parse_judge_response,
    render_judge_prompt,
)
from calreason.synthdata import AssessmentRecord, encode_features, overall_from

GOOD = "\n".join(f"{k}: 0.5" for k in JUDGE_LABELS)


def make_record():
    scores = {d: 3 for d in DIMENSIONS[:5]}
    scores["overall"] = overall_from(scores)
    arts = (ArtifactSpan("noise", 2.0, 4.0, "hissing background static"),)
    return AssessmentRecord(0, encode_features(scores, arts), scores, arts, render_summary(scores, arts))


class Judge:
    """Local judge server; ``plan`` holds (status, body) pairs consumed per request."""

    def __init__(self, plan=None, default=(200, {"text": GOOD}), delay=0.0):
        self.plan = list(plan or [])
        self.default = default
        self.delay = delay
        self.prompts = []
        self.in_flight = 0
        self.peak = 0
        self.lock = threading.Lock()
        judge = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with judge.lock:
                    judge.prompts.append(body["prompt"])
                    judge.in_flight += 1
                    judge.peak = max(judge.peak, judge.in_flight)
                    status, payload = judge.plan.pop(0) if judge.plan else judge.default
                time.sleep(judge.delay)
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                with judge.lock:
                    judge.in_flight -= 1

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/judge"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def judge_server():
    servers = []

    def start(**kw):
        s = Judge(**kw)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.close()


def client_for(server, sleeps=None, **kw):
    cfg = JudgeConfig(mode="http", endpoint_url=server.url, timeout=5.0, **kw)
    sleep = sleeps.append if sleeps is not None else (lambda s: None)
    return JudgeClient(cfg, sleep=sleep)


def test_parse_response_clamps_and_ignores_other_lines():
    text = "preamble\n" + "\n".join(f"{k}: 1.5" for k in JUDGE_LABELS) + "\nnotes: fine"
    assert parse_judge_response(text) == {k: 1.0 for k in JUDGE_LABELS}


@pytest.mark.parametrize("text", ["", "naturalness: x", GOOD.replace("0.5", "nan", 1)])
def test_parse_response_rejects_bad_text(text):
    with pytest.raises(JudgeResponseMalformed):
        parse_judge_response(text)


def test_prompt_mentions_generation_and_reference():
    rec = make_record()
    prompt = render_judge_prompt("my generation", rec)
    assert "my generation" in prompt and "noise 2.0..4.0: hissing background static" in prompt
    assert render_judge_prompt("x", rec, "{generation}|{reference_scores}") == "x|" + " ".join(
        f"{d}={rec.scores[d]}" for d in DIMENSIONS)


def test_http_success(judge_server):
    server = judge_server()
    labels = client_for(server).labels("anything", make_record())
    assert labels == {k: 0.5 for k in JUDGE_LABELS}
    assert server.prompts == [render_judge_prompt("anything", make_record())]


def test_retries_with_exponential_backoff(judge_server):
    server = judge_server(plan=[(500, "boom"), (503, "busy")])
    sleeps = []
    client = client_for(server, sleeps, retries=3)
    assert client.labels("x", make_record()) == {k: 0.5 for k in JUDGE_LABELS}
    assert sleeps == [0.5, 1.0] and client.fallbacks == 0


def test_fallback_to_mock_after_exhausting_retries(judge_server):
    server = judge_server(default=(500, "down"))
    sleeps = []
    client = client_for(server, sleeps, retries=2)
    rec = make_record()
    text = render_reference_texts(rec)[1]
    assert client.labels(text, rec) == mock_judge_labels(text, rec)
    assert sleeps == [0.5, 1.0] and len(server.prompts) == 3 and client.fallbacks == 1


def test_unavailable_without_fallback(judge_server):
    server = judge_server(default=(500, "down"))
    with pytest.raises(JudgeUnavailable):
        client_for(server, retries=1, fallback_to_mock=False).labels("x", make_record())


def test_malformed_body_without_fallback(judge_server):
    server = judge_server(default=(200, {"answer": 1}))
    with pytest.raises(JudgeResponseMalformed):
        client_for(server, retries=0, fallback_to_mock=False).labels("x", make_record())


def test_unreachable_endpoint_falls_back():
    cfg = JudgeConfig(mode="http", endpoint_url="http://127.0.0.1:9/none", timeout=1.0, retries=1)
    client = JudgeClient(cfg, sleep=lambda s: None)
    rec = make_record()
    assert client.labels("", rec) == mock_judge_labels("", rec)
    assert client.fallbacks == 1


def test_concurrency_is_bounded(judge_server):
    server = judge_server(delay=0.05)
    client = client_for(server, max_in_flight=2)
    out = client.score_many([f"text {i}" for i in range(8)], make_record())
    assert len(out) == 8 and server.peak <= 2
    assert server.peak == 2


def test_engine_uses_http_judge(judge_server):
    server = judge_server()
    cfg = JudgeConfig(mode="http", endpoint_url=server.url, timeout=5.0)
    totals = [b.total for b in RewardEngine("judge", cfg)(["a", "b", "c"], make_record())]
    assert totals == pytest.approx([4.5] * 3)
    assert len(server.prompts) == 3
