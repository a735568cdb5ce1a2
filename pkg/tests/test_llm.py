from __future__ import annotations

import json
import threading

import pytest

from dsr.llm import (
    CompletionRequest,
    LlmClient,
    ReplayMissError,
    ScriptedRule,
    ScriptedRuleMissError,
    load_scripted_rules,
    request,
    request_digest,
)


def _req(content="hello", **kw):
    return request(content, **kw)


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(messages=())
    with pytest.raises(ValueError):
        request("x", temperature=-0.1)


def test_digest_stable_and_ignores_output_cap():
    a = _req("same", temperature=0.7, tag="t")
    b = CompletionRequest(messages=a.messages, temperature=0.7, max_output_tokens=9, tag="t")
    assert request_digest(a) == request_digest(b)
    assert request_digest(a) != request_digest(_req("same", temperature=0.8, tag="t"))
    assert request_digest(a) != request_digest(_req("same", temperature=0.7, tag="other"))
    assert request_digest(a, sample_index=0) != request_digest(a)


def test_scripted_rule_matching():
    client = LlmClient(
        "scripted",
        rules=[
            ScriptedRule(tag="evolve.select_action", pattern="error", responses=["ACTION: REVISE"]),
            ScriptedRule(tag="evolve.*", responses=["fallback"]),
        ],
    )
    assert client.complete(_req("an error occurred", tag="evolve.select_action")) == "ACTION: REVISE"
    assert client.complete(_req("anything", tag="evolve.final")) == "fallback"
    with pytest.raises(ScriptedRuleMissError):
        client.complete(_req("x", tag="select.sample_tables"))


def test_scripted_cursor_consumes_in_order():
    client = LlmClient(
        "scripted",
        rules=[ScriptedRule(tag="t", responses=["one", "two", "three"])],
    )
    req = _req("x", tag="t")
    assert [client.complete(req) for _ in range(5)] == ["one", "two", "three", "three", "three"]


def test_scripted_callable_response():
    rule = ScriptedRule(tag="t", responses=[lambda r: r.text().upper()])
    client = LlmClient("scripted", rules=[rule])
    assert client.complete(_req("abc", tag="t")) == "ABC"


def test_sample_k3_scripted_index_order():
    client = LlmClient("scripted", rules=[ScriptedRule(tag="t", responses=["a", "b", "c"])])
    assert client.sample(_req("x", tag="t"), 3) == ["a", "b", "c"]


def test_sample_k1_equals_complete():
    client = LlmClient("scripted", rules=[ScriptedRule(tag="t", responses=["only"])])
    assert client.sample(_req("x", tag="t"), 1) == ["only"]


def test_sample_skip_failures():
    calls = {"n": 0}

    def flaky(req):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise ScriptedRuleMissError("boom")
        return "ok"

    client = LlmClient("scripted", rules=[ScriptedRule(tag="t", responses=[flaky] * 3)])
    out = client.sample(_req("x", tag="t"), 3, skip_failures=True)
    assert out == ["ok"]


def test_record_then_replay_roundtrip(tmp_path, monkeypatch):
    transcript = tmp_path / "transcript.jsonl"
    recorder = LlmClient("record", base_url="http://example.invalid/v1", transcript_path=transcript)
    responses = iter(["alpha", "beta", "gamma", "solo"])
    monkeypatch.setattr(LlmClient, "_live", lambda self, req: next(responses))

    req = _req("the prompt", tag="select.sample_tables")
    recorded = recorder.sample(req, 3)
    single = recorder.complete(_req("one-off", tag="evolve.final"))
    assert recorded == ["alpha", "beta", "gamma"]
    assert single == "solo"

    lines = [json.loads(line) for line in transcript.read_text().splitlines()]
    assert len(lines) == 4
    assert {record["tag"] for record in lines} == {"select.sample_tables", "evolve.final"}

    replayer = LlmClient("replay", transcript_path=transcript)
    assert replayer.sample(req, 3) == ["alpha", "beta", "gamma"]
    assert replayer.complete(_req("one-off", tag="evolve.final")) == "solo"


def test_replay_miss_is_error(tmp_path):
    transcript = tmp_path / "t.jsonl"
    transcript.write_text("")
    client = LlmClient("replay", transcript_path=transcript)
    with pytest.raises(ReplayMissError):
        client.complete(_req("never recorded", tag="x"))


def test_replay_and_scripted_never_touch_network(tmp_path, no_network):
    transcript = tmp_path / "t.jsonl"
    digest = request_digest(_req("p", tag="t"))
    transcript.write_text(json.dumps({"digest": digest, "response": "r"}) + "\n")
    replayer = LlmClient("replay", transcript_path=transcript)
    assert replayer.complete(_req("p", tag="t")) == "r"
    scripted = LlmClient("scripted", rules=[ScriptedRule(tag="t", responses=["s"])])
    assert scripted.complete(_req("p", tag="t")) == "s"


def test_rules_file_loading(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(
        json.dumps(
            [
                {"tag": "a", "pattern": "x", "response": "one"},
                {"tag": "b", "responses": ["r1", "r2"]},
            ]
        )
    )
    rules = load_scripted_rules(path)
    assert rules[0].responses == ["one"]
    assert rules[1].responses == ["r1", "r2"]


def test_call_counting_thread_safe():
    client = LlmClient("scripted", rules=[ScriptedRule(tag="t", responses=["r"])])
    req = _req("x", tag="t")

    def worker():
        for _ in range(50):
            client.complete(req)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert client.calls == 200
    assert client.calls_by_tag["t"] == 200


def test_mode_validation():
    with pytest.raises(ValueError):
        LlmClient("bogus")
    with pytest.raises(ValueError):
        LlmClient("replay")
    with pytest.raises(ValueError):
        LlmClient("live")
