"""Label-probability oracles over prompted text.

Three backends share one interface:

``ScriptedOracle``
    rule table keyed on words of the masked text, used by unit tests.
``LexiconOracle``
    keyword-weight simulator of a label-aware LLM, used with synthetic corpora.
``RemoteOracle``
    OpenAI-compatible ``/completions`` endpoint scored in echo mode.

All of them return ``label_probability`` clamped into
``[probability_floor, 1 - probability_floor]`` so ``-1 / log(p)`` stays finite.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import string
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

from priorguide.core import LabelSpace
from priorguide.errors import (
    CapabilityError,
    InvalidInputError,
    OracleUnavailableError,
    TemplateError,
)

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("instructions", "labels", "text")

# Not published with the method; configurable through PromptTemplate.
DEFAULT_INSTRUCTIONS = (
    "Classify the user utterance into exactly one of the labels below. "
    "Answer with the label name only."
)
DEFAULT_CAP_TEMPLATE = "{instructions}\nLabels: {labels}\nText: {text}\nLabel:"
PLAIN_TEMPLATE = "Text: {text}\nLabel:"
TEXT_MARKER = "Text:"
LABELS_MARKER = "Labels:"


@dataclass(frozen=True)
class PromptTemplate:
    template: str = DEFAULT_CAP_TEMPLATE
    instructions: str = DEFAULT_INSTRUCTIONS
    labels: LabelSpace | None = None

    def __post_init__(self):
        counts = {name: 0 for name in PLACEHOLDERS}
        try:
            fields = [f for _, f, _, _ in string.Formatter().parse(self.template) if f is not None]
        except ValueError as exc:
            raise TemplateError(f"malformed template: {exc}") from None
        for f in fields:
            if f not in counts:
                raise TemplateError(f"unresolved placeholder {{{f}}}")
            counts[f] += 1
        if counts["text"] != 1:
            raise TemplateError("template must contain {text} exactly once")
        for name in ("instructions", "labels"):
            if counts[name] > 1:
                raise TemplateError(f"placeholder {{{name}}} appears more than once")

    @property
    def label_aware(self) -> bool:
        return "{labels}" in self.template

    @classmethod
    def plain(cls) -> "PromptTemplate":
        """Template without instructions or label space (the perturbation baseline)."""
        return cls(template=PLAIN_TEMPLATE, instructions="")


def render_prompt(tpl: PromptTemplate, masked_text: str) -> str:
    if tpl.label_aware and tpl.labels is None:
        raise TemplateError("template shows {labels} but no label space was given")
    values = {
        "instructions": tpl.instructions,
        "labels": ", ".join(tpl.labels.names) if tpl.labels is not None else "",
        "text": masked_text,
    }
    out = []
    # Manual rendering keeps braces inside the text literal.
    for literal, name, spec, conv in string.Formatter().parse(tpl.template):
        out.append(literal)
        if name is not None:
            if name not in values or spec or conv:
                raise TemplateError(f"unresolved placeholder {{{name}}}")
            out.append(values[name])
    return "".join(out)


@dataclass
class OracleConfig:
    backend: str = "scripted"
    endpoint: str = "http://localhost:8000/v1"
    model_name: str = ""
    probability_floor: float = 1e-6
    max_in_flight: int = 4
    timeout: float = 30.0
    retry_budget: int = 2
    api_key_env: str = "PRIORGUIDE_API_KEY"
    cache_dir: str | None = None
    # Scripted backend definition: a path to a JSON document or the document itself.
    script: Any = None

    def __post_init__(self):
        if self.backend not in ("remote", "scripted"):
            raise InvalidInputError(f"unknown oracle backend {self.backend!r}")
        if not (0.0 < self.probability_floor < 0.5):
            raise InvalidInputError("probability_floor must lie in (0, 0.5)")
        if self.max_in_flight < 1:
            raise InvalidInputError("max_in_flight must be positive")
        if self.retry_budget < 0:
            raise InvalidInputError("retry_budget must be non-negative")


def _text_segment(prompt: str, marker: str | None) -> str:
    if not marker or marker not in prompt:
        return prompt
    tail = prompt.rsplit(marker, 1)[1]
    return tail.split("\n", 1)[0].strip()


def _words(text: str) -> list[str]:
    return re.findall(r"[\w']+", text.lower())


class Oracle:
    """Base class: subclasses report per-token probabilities of a label continuation."""

    def __init__(self, probability_floor: float = 1e-6):
        if not (0.0 < probability_floor < 0.5):
            raise InvalidInputError("probability_floor must lie in (0, 0.5)")
        self.probability_floor = probability_floor
        self.calls = 0
        self._count_lock = threading.Lock()

    def token_probabilities(self, prompt: str, label: str) -> list[float]:
        raise NotImplementedError

    def label_probability(self, prompt: str, label: str) -> float:
        with self._count_lock:
            self.calls += 1
        probs = self.token_probabilities(prompt, label)
        if not probs:
            raise CapabilityError(f"label {label!r} produced no answer tokens")
        p = math.prod(probs)
        return min(max(p, self.probability_floor), 1.0 - self.probability_floor)

    def generate(self, prompt: str, max_tokens: int = 64) -> str:
        raise CapabilityError(f"{type(self).__name__} cannot generate text")


def label_probability(oracle: Oracle, prompt: str, label: str) -> float:
    return oracle.label_probability(prompt, label)


@dataclass(frozen=True)
class ScriptRule:
    """Fires when all ``present`` words survive and no ``absent`` word does."""

    label: str
    probability: float | None = None
    token_probs: tuple[float, ...] | None = None
    present: tuple[str, ...] = ()
    absent: tuple[str, ...] = ()
    predicate: Callable[[str], bool] | None = None

    def __post_init__(self):
        probs = self.token_probs if self.token_probs is not None else (self.probability,)
        if probs is None or any(p is None or not (0.0 < p < 1.0) for p in probs):
            raise InvalidInputError("scripted probabilities must lie in (0, 1)")

    def matches(self, text: str, label: str) -> bool:
        if label != self.label:
            return False
        words = set(_words(text))
        if not all(w in words for w in self.present) or any(w in words for w in self.absent):
            return False
        return self.predicate is None or self.predicate(text)

    def probs(self) -> list[float]:
        return list(self.token_probs) if self.token_probs is not None else [self.probability]


class ScriptedOracle(Oracle):
    """Deterministic rule table. The first matching rule wins; otherwise ``default``."""

    def __init__(
        self,
        rules: Sequence[ScriptRule] = (),
        default: float = 0.5,
        text_marker: str | None = TEXT_MARKER,
        probability_floor: float = 1e-6,
    ):
        super().__init__(probability_floor)
        if not (0.0 < default < 1.0):
            raise InvalidInputError("default probability must lie in (0, 1)")
        self.rules = list(rules)
        self.default = default
        self.text_marker = text_marker

    def token_probabilities(self, prompt: str, label: str) -> list[float]:
        text = _text_segment(prompt, self.text_marker)
        for rule in self.rules:
            if rule.matches(text, label):
                return rule.probs()
        return [self.default]


class LexiconOracle(Oracle):
    """Simulated LLM scoring labels from keyword weights.

    When the prompt lists the label space it answers like a classifier that
    contrasts all labels (softmax over label scores). Without it the answer
    reflects plain label affinity, ``sigmoid(score - bias)``, where every
    label-associated word counts regardless of whether other labels share it.
    ``plain_lexicon``, when given, replaces the weights in that mode; frequent
    words shared across labels then tend to dominate the affinity.
    """

    def __init__(
        self,
        lexicon: Mapping[str, Mapping[str, float]],
        labels: Sequence[str] | None = None,
        plain_bias: float = 2.0,
        text_marker: str | None = TEXT_MARKER,
        labels_marker: str = LABELS_MARKER,
        probability_floor: float = 1e-6,
        plain_lexicon: Mapping[str, Mapping[str, float]] | None = None,
    ):
        super().__init__(probability_floor)
        self.labels = list(labels) if labels is not None else sorted(lexicon)
        self.lexicon = {c: dict(lexicon.get(c, {})) for c in self.labels}
        self.plain_lexicon = (
            {c: dict(plain_lexicon.get(c, {})) for c in self.labels} if plain_lexicon is not None else None
        )
        self.plain_bias = plain_bias
        self.text_marker = text_marker
        self.labels_marker = labels_marker

    def scores(self, text: str, plain: bool = False) -> dict[str, float]:
        words = _words(text)
        lex = self.plain_lexicon if plain and self.plain_lexicon is not None else self.lexicon
        return {c: sum(lex[c].get(w, 0.0) for w in words) for c in self.labels}

    def token_probabilities(self, prompt: str, label: str) -> list[float]:
        if label not in self.lexicon:
            raise InvalidInputError(f"label {label!r} unknown to the lexicon oracle")
        text = _text_segment(prompt, self.text_marker)
        if self.labels_marker in prompt:
            scores = self.scores(text)
            top = max(scores.values())
            z = sum(math.exp(s - top) for s in scores.values())
            return [math.exp(scores[label] - top) / z]
        score = self.scores(text, plain=True)[label]
        return [1.0 / (1.0 + math.exp(-(score - self.plain_bias)))]

    def to_json(self) -> dict:
        doc = {
            "kind": "lexicon",
            "labels": self.labels,
            "lexicon": self.lexicon,
            "plain_bias": self.plain_bias,
        }
        if self.plain_lexicon is not None:
            doc["plain_lexicon"] = self.plain_lexicon
        return doc


def load_scripted(doc: Any, probability_floor: float = 1e-6) -> Oracle:
    """Build a scripted backend from a JSON document or a path to one."""
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    if not isinstance(doc, Mapping):
        raise InvalidInputError("scripted oracle definition must be a JSON object")
    kind = doc.get("kind", "rules")
    if kind == "lexicon":
        return LexiconOracle(
            doc["lexicon"],
            labels=doc.get("labels"),
            plain_bias=float(doc.get("plain_bias", 2.0)),
            probability_floor=probability_floor,
            plain_lexicon=doc.get("plain_lexicon"),
        )
    if kind == "rules":
        rules = [
            ScriptRule(
                label=r["label"],
                probability=r.get("p"),
                token_probs=tuple(r["token_probs"]) if "token_probs" in r else None,
                present=tuple(r.get("present", ())),
                absent=tuple(r.get("absent", ())),
            )
            for r in doc.get("rules", [])
        ]
        return ScriptedOracle(rules, default=float(doc.get("default", 0.5)), probability_floor=probability_floor)
    raise InvalidInputError(f"unknown scripted oracle kind {kind!r}")


class RemoteOracle(Oracle):
    """Scores a label as the continuation of the prompt via echo-mode logprobs.

    The bearer token is read from the environment variable named in
    ``OracleConfig.api_key_env``. Responses are cached by a content hash of
    (model, prompt, label), in memory and optionally on disk.
    """

    label_prefix = " "

    def __init__(self, cfg: OracleConfig, client: httpx.Client | None = None):
        super().__init__(cfg.probability_floor)
        self.cfg = cfg
        headers = {}
        token = os.environ.get(cfg.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._headers = headers
        self._gate = threading.BoundedSemaphore(cfg.max_in_flight)
        self._cache: dict[str, Any] = {}
        self._cache_lock = threading.Lock()
        self._cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else None
        if self._cache_dir is not None:
            self._cache_dir.mkdir(parents=True, exist_ok=True)
        self.requests = 0
        self.in_flight = 0
        self.max_observed_in_flight = 0

    def _key(self, *parts: str) -> str:
        blob = json.dumps([self.cfg.model_name, *parts], ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _cached(self, key: str, compute: Callable[[], Any]) -> Any:
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
        path = self._cache_dir / f"{key}.json" if self._cache_dir else None
        if path is not None and path.exists():
            value = json.loads(path.read_text())
        else:
            value = compute()
            if path is not None:
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(value))
                tmp.replace(path)
        with self._cache_lock:
            self._cache[key] = value
        return value

    def _post(self, payload: dict) -> dict:
        url = self.cfg.endpoint.rstrip("/") + "/completions"
        last_exc: Exception | None = None
        for attempt in range(self.cfg.retry_budget + 1):
            with self._gate:
                with self._count_lock:
                    self.requests += 1
                    self.in_flight += 1
                    self.max_observed_in_flight = max(self.max_observed_in_flight, self.in_flight)
                try:
                    resp = self._client.post(url, json=payload, headers=self._headers, timeout=self.cfg.timeout)
                    if resp.status_code >= 500 or resp.status_code == 429:
                        raise httpx.HTTPStatusError(
                            f"server returned {resp.status_code}", request=resp.request, response=resp
                        )
                    resp.raise_for_status()
                    return resp.json()
                except httpx.HTTPStatusError as exc:
                    if exc.response.status_code < 500 and exc.response.status_code != 429:
                        raise OracleUnavailableError(f"oracle rejected request: {exc}") from exc
                    last_exc = exc
                except (httpx.TransportError, ValueError) as exc:
                    last_exc = exc
                finally:
                    with self._count_lock:
                        self.in_flight -= 1
            if attempt < self.cfg.retry_budget:
                time.sleep(min(0.05 * 2**attempt, 1.0))
        raise OracleUnavailableError(
            f"oracle unreachable after {self.cfg.retry_budget + 1} attempts: {last_exc}"
        )

    def token_probabilities(self, prompt: str, label: str) -> list[float]:
        logprobs = self._cached(self._key("score", prompt, label), lambda: self._score(prompt, label))
        return [math.exp(lp) for lp in logprobs]

    def _score(self, prompt: str, label: str) -> list[float]:
        full = prompt + self.label_prefix + label
        body = self._post(
            {
                "model": self.cfg.model_name,
                "prompt": full,
                "max_tokens": 1,
                "echo": True,
                "logprobs": 0,
                "temperature": 0.0,
            }
        )
        try:
            lp = body["choices"][0]["logprobs"]
            tokens, token_lps, offsets = lp["tokens"], lp["token_logprobs"], lp["text_offset"]
        except (KeyError, IndexError, TypeError):
            raise CapabilityError("backend did not return per-token log-probabilities") from None
        start, stop = len(prompt), len(full)
        picked = []
        for i, (tok, off) in enumerate(zip(tokens, offsets)):
            end = offsets[i + 1] if i + 1 < len(offsets) else off + len(tok)
            if end > start and off < stop:
                if token_lps[i] is None:
                    raise CapabilityError("backend omitted a log-probability for an answer token")
                picked.append(float(token_lps[i]))
        if not picked:
            raise CapabilityError(f"label {label!r} maps to no answer tokens")
        return picked

    def generate(self, prompt: str, max_tokens: int = 64) -> str:
        def run():
            body = self._post(
                {"model": self.cfg.model_name, "prompt": prompt, "max_tokens": max_tokens, "temperature": 0.0}
            )
            try:
                return body["choices"][0]["text"]
            except (KeyError, IndexError, TypeError):
                raise CapabilityError("backend returned no completion text") from None

        return self._cached(self._key("generate", prompt, str(max_tokens)), run).strip()


def make_oracle(cfg: OracleConfig, client: httpx.Client | None = None) -> Oracle:
    if cfg.backend == "remote":
        return RemoteOracle(cfg, client=client)
    if cfg.script is None:
        raise InvalidInputError("scripted backend needs a script definition")
    return load_scripted(cfg.script, probability_floor=cfg.probability_floor)
