import json
import math
import re
import threading
import time

import httpx
import pytest

from priorguide.core import LabelSpace
from priorguide.errors import CapabilityError, InvalidInputError, OracleUnavailableError, TemplateError
from priorguide.oracle import (
    LexiconOracle,
    Oracle,
    OracleConfig,
    PromptTemplate,
    RemoteOracle,
    ScriptedOracle,
    ScriptRule,
    label_probability,
    load_scripted,
    make_oracle,
    render_prompt,
)


class TestRenderPrompt:
    def test_substitution(self):
        tpl = PromptTemplate("{instructions}\nLabels: {labels}\nText: {text}", "Classify.", LabelSpace(("a", "b")))
        assert render_prompt(tpl, "hi") == "Classify.\nLabels: a, b\nText: hi"

    def test_empty_instructions(self):
        tpl = PromptTemplate(instructions="", labels=LabelSpace(("x",)))
        out = render_prompt(tpl, "hello")
        assert out.startswith("\nLabels: x\nText: hello")
        assert render_prompt(tpl, "hello") == out

    def test_braces_in_text_survive(self):
        tpl = PromptTemplate.plain()
        assert render_prompt(tpl, "use {curly} now") == "Text: use {curly} now\nLabel:"

    def test_placeholder_errors(self):
        with pytest.raises(TemplateError):
            PromptTemplate("{instructions} {text} {extra}")
        with pytest.raises(TemplateError):
            PromptTemplate("{text} {text}")
        with pytest.raises(TemplateError):
            PromptTemplate("no text here")
        with pytest.raises(TemplateError):
            render_prompt(PromptTemplate(), "label space missing")


class _Fixed(Oracle):
    def __init__(self, probs, **kw):
        super().__init__(**kw)
        self.probs = probs

    def token_probabilities(self, prompt, label):
        return list(self.probs)


class TestLabelProbability:
    def test_product_rule(self):
        oracle = ScriptedOracle([ScriptRule("two_tok", token_probs=(0.5, 0.5))])
        assert label_probability(oracle, "Text: anything", "two_tok") == pytest.approx(0.25)

    def test_clamp(self):
        assert _Fixed([1.0]).label_probability("p", "x") == 1.0 - 1e-6
        assert _Fixed([0.0]).label_probability("p", "x") == 1e-6
        assert _Fixed([1.0], probability_floor=0.01).label_probability("p", "x") == 0.99

    def test_no_tokens_is_capability_error(self):
        with pytest.raises(CapabilityError):
            _Fixed([]).label_probability("p", "x")

    def test_scripted_rule(self):
        oracle = ScriptedOracle([ScriptRule("set_alarm", 0.9, present=("alarm",))], default=0.2)
        assert oracle.label_probability("Text: wake alarm please", "set_alarm") == pytest.approx(0.9)
        assert oracle.label_probability("Text: wake please", "set_alarm") == pytest.approx(0.2)
        assert oracle.calls == 2

    def test_rule_probabilities_open_interval(self):
        with pytest.raises(InvalidInputError):
            ScriptRule("a", 1.0)
        with pytest.raises(InvalidInputError):
            ScriptRule("a", token_probs=(0.5, 0.0))

    def test_scripted_cannot_generate(self):
        with pytest.raises(CapabilityError):
            ScriptedOracle().generate("prompt")

    def test_floor_validated(self):
        with pytest.raises(InvalidInputError):
            OracleConfig(probability_floor=0.5)
        with pytest.raises(InvalidInputError):
            OracleConfig(backend="local")


class TestLexiconOracle:
    lex = {"a": {"alpha": 2.0, "both": 1.0}, "b": {"beta": 2.0, "both": 1.0}}

    def test_label_aware_softmax(self):
        o = LexiconOracle(self.lex, ["a", "b"])
        prompt = render_prompt(PromptTemplate(labels=LabelSpace(("a", "b"))), "alpha both")
        pa, pb = o.label_probability(prompt, "a"), o.label_probability(prompt, "b")
        assert pa + pb == pytest.approx(1.0)
        assert pa == pytest.approx(1 / (1 + math.exp(-2.0)))

    def test_plain_affinity(self):
        o = LexiconOracle(self.lex, ["a", "b"], plain_bias=1.0, plain_lexicon={"a": {"both": 3.0}, "b": {}})
        p = o.label_probability("Text: both\nLabel:", "a")
        assert p == pytest.approx(1 / (1 + math.exp(-2.0)))

    def test_unknown_label(self):
        with pytest.raises(InvalidInputError):
            LexiconOracle(self.lex).label_probability("Text: x", "c")

    def test_json_round_trip(self):
        o = LexiconOracle(self.lex, ["a", "b"], plain_lexicon={"a": {"both": 3.0}})
        again = load_scripted(json.loads(json.dumps(o.to_json())))
        prompt = "Text: alpha both\nLabel:"
        assert again.label_probability(prompt, "a") == o.label_probability(prompt, "a")

    def test_load_rules_from_file(self, tmp_path):
        path = tmp_path / "o.json"
        path.write_text(json.dumps({"kind": "rules", "default": 0.3, "rules": [{"label": "x", "p": 0.8, "present": ["go"]}]}))
        o = make_oracle(OracleConfig(script=str(path)))
        assert o.label_probability("Text: go now", "x") == pytest.approx(0.8)
        assert o.label_probability("Text: stop", "x") == pytest.approx(0.3)
        with pytest.raises(InvalidInputError):
            load_scripted({"kind": "neural"})


def _tokenize(text):
    return [(m.group(0), m.start()) for m in re.finditer(r"\s?\S+|\s+", text)]


class FakeCompletions:
    """Echo-mode completions server: every token of the label scores log(0.5)."""

    def __init__(self, delay=0.0, fail_first=0, status=503, drop_logprobs=False):
        self.delay = delay
        self.fail_first = fail_first
        self.status = status
        self.drop_logprobs = drop_logprobs
        self.calls = 0
        self.bodies = []
        self.headers = []
        self._lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.calls += 1
            n = self.calls
        body = json.loads(request.content)
        self.bodies.append(body)
        self.headers.append(dict(request.headers))
        if self.delay:
            time.sleep(self.delay)
        if n <= self.fail_first:
            return httpx.Response(self.status, json={"error": "busy"})
        if "echo" not in body:
            return httpx.Response(200, json={"choices": [{"text": " generated text\nmore"}]})
        toks = _tokenize(body["prompt"])
        label_start = body["prompt"].rindex(" ")
        lps = [None] + [math.log(0.5) if off >= label_start else -0.1 for _, off in toks[1:]]
        lp = {"tokens": [t for t, _ in toks], "token_logprobs": lps, "text_offset": [o for _, o in toks]}
        choice = {"text": body["prompt"]}
        if not self.drop_logprobs:
            choice["logprobs"] = lp
        return httpx.Response(200, json={"choices": [choice]})


def remote(server, **kw):
    cfg = OracleConfig(backend="remote", endpoint="http://llm.test/v1", model_name="m", **kw)
    return RemoteOracle(cfg, client=httpx.Client(transport=httpx.MockTransport(server)))


class TestRemoteOracle:
    def test_request_shape_and_scoring(self, monkeypatch):
        monkeypatch.setenv("PRIORGUIDE_API_KEY", "secret")
        server = FakeCompletions()
        o = remote(server)
        p = o.label_probability("Text: hi there\nLabel:", "greet")
        assert p == pytest.approx(0.5)
        body = server.bodies[0]
        assert body["prompt"] == "Text: hi there\nLabel: greet"
        assert body["echo"] is True and body["max_tokens"] == 1 and body["logprobs"] == 0
        assert server.headers[0]["authorization"] == "Bearer secret"

    def test_cache_avoids_duplicate_requests(self):
        server = FakeCompletions()
        o = remote(server)
        for _ in range(3):
            o.label_probability("Text: a\nLabel:", "x")
        assert server.calls == 1
        o.label_probability("Text: b\nLabel:", "x")
        assert server.calls == 2

    def test_disk_cache_survives_instances(self, tmp_path):
        server = FakeCompletions()
        remote(server, cache_dir=str(tmp_path)).label_probability("Text: a\nLabel:", "x")
        again = FakeCompletions()
        assert remote(again, cache_dir=str(tmp_path)).label_probability("Text: a\nLabel:", "x") == pytest.approx(0.5)
        assert again.calls == 0

    def test_in_flight_limit(self):
        server = FakeCompletions(delay=0.02)
        o = remote(server, max_in_flight=2)
        threads = [threading.Thread(target=o.label_probability, args=(f"Text: q{i}\nLabel:", "x")) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert server.calls == 8
        assert 1 <= o.max_observed_in_flight <= 2

    def test_retries_then_succeeds(self):
        server = FakeCompletions(fail_first=2)
        o = remote(server, retry_budget=2)
        assert o.label_probability("Text: a\nLabel:", "x") == pytest.approx(0.5)
        assert o.requests == 3

    def test_retry_budget_exhausted(self):
        server = FakeCompletions(fail_first=5)
        with pytest.raises(OracleUnavailableError):
            remote(server, retry_budget=1).label_probability("Text: a\nLabel:", "x")
        assert server.calls == 2

    def test_client_error_not_retried(self):
        server = FakeCompletions(fail_first=5, status=401)
        with pytest.raises(OracleUnavailableError):
            remote(server, retry_budget=3).label_probability("Text: a\nLabel:", "x")
        assert server.calls == 1

    def test_transport_error(self):
        def boom(request):
            raise httpx.ConnectError("refused", request=request)

        cfg = OracleConfig(backend="remote", retry_budget=0)
        o = RemoteOracle(cfg, client=httpx.Client(transport=httpx.MockTransport(boom)))
        with pytest.raises(OracleUnavailableError):
            o.label_probability("Text: a", "x")

    def test_missing_logprobs_is_capability_error(self):
        with pytest.raises(CapabilityError):
            remote(FakeCompletions(drop_logprobs=True)).label_probability("Text: a\nLabel:", "x")

    def test_generate(self):
        server = FakeCompletions()
        o = remote(server)
        assert o.generate("write something") == "generated text\nmore"
        o.generate("write something")
        assert server.calls == 1
