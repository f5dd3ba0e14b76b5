import json
import logging
import threading
import time

import httpx
import numpy as np
import pytest

from heed.core import EntitySpan, Task
from heed.llm_baseline import (
    HYPERTEXT_CHUNK, TEXT_CHUNK, ClientExhausted, HttpCompletionClient, OracleClient, PromptChunk,
    StaticClient, build_prompt, complete_all, format_spans, parse_llm_spans, prompt_chunks, run_baseline,
)

from conftest import small_record

# (completion, expected spans, expected dropped, expected failure)
MALFORMED = [
    ("[(1,2), (5,6)]", [(1, 2), (5, 6)], 0, False),
    ("[(1,2), (5,6)]]", [(1, 2), (5, 6)], 0, False),
    ("Sure! The spans are [(3, 4)].", [(3, 4)], 0, False),
    ("[[3, 4], [7, 9]]", [(3, 4), (7, 9)], 0, False),
    ("[(1 ,2),(5,  6)", [(1, 2), (5, 6)], 0, False),
    ("[(1;2)]", [(1, 2)], 0, False),
    ("[]", [], 0, False),
    ("[ ]", [], 0, False),
    ("There are no entities: []", [], 0, False),
    ("[(2,1)]", [], 1, False),
    ("[(-1,2), (4,4)]", [(4, 4)], 1, False),
    ("[(a,b), (1,1)]", [(1, 1)], 1, False),
    ("[(1.5,2)]", [], 1, False),
    ("[(1,2), (1,2)]", [(1, 2)], 0, False),
    ("(8,9)", [(8, 9)], 0, False),
    ("Answer:\n[(10,12),\n (20,21)]\nHope this helps", [(10, 12), (20, 21)], 0, False),
    ("I cannot find any.", [], 0, True),
    ("", [], 0, True),
    (None, [], 0, True),
    ("[1, 2, 3]", [], 0, True),
]


@pytest.mark.parametrize("completion, spans, dropped, failed", MALFORMED)
def test_parse_llm_spans_fixture(completion, spans, dropped, failed):
    out = parse_llm_spans(completion)
    assert (list(out.spans), out.dropped, out.failed) == (spans, dropped, failed)


def test_format_parse_roundtrip():
    spans = [(0, 0), (3, 7), (100, 120)]
    assert list(parse_llm_spans(format_spans(spans)).spans) == spans


def test_text_prompt_example():
    chunk = PromptChunk("p", 0, 0, ("Cheap", "kettle", "$9.99"), ((0,) * 20,) * 3)
    prompt = build_prompt(chunk, Task.NAME, with_hypertext=False)
    assert prompt.startswith("Given the text of a web page: Cheap kettle $9.99, please extract all entities")
    assert "[(1,2), (5,6)]]" in prompt and "[[" not in prompt


def test_hypertext_prompt_lists_features():
    feats = ((1,) + (0,) * 19, (2,) + (0,) * 19)
    chunk = PromptChunk("p", 0, 0, ("a", "b"), feats)
    prompt = build_prompt(chunk, "price", with_hypertext=True)
    assert "[[1, 0, 0" in prompt and "[2, 0," in prompt
    with pytest.raises(ValueError):
        build_prompt(PromptChunk("p", 0, 0, (), ()), "price", True)
    long = PromptChunk("p", 0, 0, ("x",) * (HYPERTEXT_CHUNK + 1), ((0,) * 20,) * (HYPERTEXT_CHUNK + 1))
    with pytest.raises(ValueError, match="exceeds"):
        build_prompt(long, "price", True)


def test_prompt_chunk_sizes():
    rec = small_record(300)
    assert [len(c.tokens) for c in prompt_chunks(rec, True)] == [128, 128, 44]
    assert [len(c.tokens) for c in prompt_chunks(rec, False)] == [300]
    assert TEXT_CHUNK == 1024


@pytest.mark.parametrize("hypertext", [False, True])
def test_oracle_mock_scores_perfectly(records, hypertext, tmp_path):
    recs = records[:3]
    res = run_baseline(recs, OracleClient.from_records(recs, with_hypertext=hypertext),
                       with_hypertext=hypertext, transcript_path=tmp_path / "t.jsonl")
    o = res.report.overall
    assert (o.precision, o.recall, o.f1) == (100.0, 100.0, 100.0)
    n_prompts = sum(len(prompt_chunks(r, hypertext)) for r in recs) * 3
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == len(res.transcript) == n_prompts
    assert all(json.loads(x)["completion"] is not None for x in lines)
    assert not res.incomplete and res.parse_failures == 0


def test_oracle_handles_span_across_prompt_chunks():
    rec = small_record(300, spans=[EntitySpan("name", 120, 140)])
    res = run_baseline([rec], OracleClient.from_records([rec], with_hypertext=True), with_hypertext=True)
    assert res.report.counts("name").tp == 1 and res.report.overall.fp == 0


def test_empty_mock_has_zero_recall(records):
    res = run_baseline(records[:2], StaticClient("[]"))
    assert res.report.overall.recall == 0.0 and res.parse_failures == 0


def test_out_of_range_pairs_are_counted():
    res = run_baseline([small_record(5, spans=[("price", 1, 1)])], StaticClient("[(1,1), (3,9)]"))
    assert res.out_of_range == 3 and res.report.counts("price").tp == 1


class Flaky:
    def __init__(self, failures):
        self.failures = list(failures)
        self.calls = 0
        self.seen_auth = []

    def __call__(self, request):
        self.calls += 1
        self.seen_auth.append(request.headers.get("authorization"))
        if self.failures:
            code = self.failures.pop(0)
            if code == "drop":
                raise httpx.ConnectError("boom", request=request)
            return httpx.Response(code, json={"error": "busy"})
        return httpx.Response(200, json={"choices": [{"message": {"content": "[(0,1)]"}}]})


def make_client(handler, **kw):
    sleeps = []
    client = HttpCompletionClient("http://llm.test/v1/chat", api_key="sk-secret-123",
                                  transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return client, sleeps


def test_http_client_retries_with_backoff(caplog):
    handler = Flaky([429, 503, "drop"])
    client, sleeps = make_client(handler, backoff=0.5)
    with caplog.at_level(logging.DEBUG):
        assert client.send("hi") == "[(0,1)]"
    assert handler.calls == 4 and sleeps == [0.5, 1.0, 2.0]
    assert handler.seen_auth[0] == "Bearer sk-secret-123"
    assert "sk-secret-123" not in caplog.text and "sk-secret-123" not in repr(client)


def test_http_client_gives_up():
    client, _ = make_client(Flaky([500] * 10), max_retries=2)
    with pytest.raises(ClientExhausted, match="3 attempts"):
        client.send("hi")


def test_http_client_does_not_retry_client_errors():
    handler = Flaky([400])
    client, _ = make_client(handler)
    with pytest.raises(httpx.HTTPStatusError):
        client.send("hi")
    assert handler.calls == 1


def test_env_configuration(monkeypatch):
    monkeypatch.setenv("LLM_ENDPOINT", "http://env.test/")
    monkeypatch.setenv("LLM_API_KEY", "k")
    client = HttpCompletionClient(transport=httpx.MockTransport(Flaky([])))
    assert client.endpoint == "http://env.test/" and client._headers()["Authorization"] == "Bearer k"
    monkeypatch.delenv("LLM_ENDPOINT")
    with pytest.raises(ValueError):
        HttpCompletionClient()


class SlowEcho:
    def __init__(self):
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def send(self, prompt):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.01 * (int(prompt) % 3))
        with self.lock:
            self.active -= 1
        if prompt == "7":
            raise RuntimeError("nope")
        return prompt


def test_complete_all_keeps_order_and_limit():
    client = SlowEcho()
    prompts = [str(i) for i in range(20)]
    out = complete_all(client, prompts, max_in_flight=3)
    assert [o for i, o in enumerate(out) if i != 7] == [p for i, p in enumerate(prompts) if i != 7]
    assert isinstance(out[7], RuntimeError)
    assert 1 <= client.peak <= 3


def test_failed_requests_mark_incomplete(records):
    class Failing:
        def send(self, prompt):
            raise ClientExhausted("down")

    res = run_baseline(records[:1], Failing())
    assert res.incomplete and all(e["error"] for e in res.transcript)
    assert np.isclose(res.report.overall.recall, 0.0)
