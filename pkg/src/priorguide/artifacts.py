"""On-disk artifact formats: datasets, priors, reports, matrices, models.

JSONL artifacts may open with a ``{"_meta": {...}}`` header carrying the
run configuration. Anything time-dependent lives under a ``metadata`` key
so reruns can be compared byte for byte once it is dropped.
"""

from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from priorguide import __version__
from priorguide.core import AttributionVector, LabeledExample, LabelSpace, tokenize
from priorguide.errors import ArtifactError, IngestionError, InvalidInputError, PriorGuideError
from priorguide.toy_model import ToyClassifier

META_KEY = "_meta"
REQUIRED_FIELDS = ("id", "text", "label")


def format_score(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return "%.17g" % float(x)


def metadata() -> dict:
    return {"created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "version": __version__}


def _dumps(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False)


def _meta_line(run_config: Mapping | None) -> str:
    return _dumps({META_KEY: {"run_config": dict(run_config or {}), "metadata": metadata()}})


def _read_lines(path: str | Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from None


def _records(path: str | Path) -> tuple[dict | None, list[tuple[int, dict]]]:
    """(header, [(line number, record)]) with blank lines skipped."""
    header = None
    out = []
    for n, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{path}: invalid JSON ({exc.msg})", line=n) from None
        if not isinstance(rec, dict):
            raise IngestionError(f"{path}: record is not an object", line=n)
        if META_KEY in rec:
            if out or header is not None:
                raise IngestionError(f"{path}: header must be the first record", line=n)
            header = rec[META_KEY]
            continue
        out.append((n, rec))
    return header, out


def read_header(path: str | Path) -> dict | None:
    return _records(path)[0]


# Datasets


def ingest_dataset(path: str | Path) -> tuple[list[LabeledExample], LabelSpace]:
    """Read a JSONL dataset with ``id``/``text``/``label`` fields.

    Words come from whitespace splitting with lowercasing; the label space
    is the sorted set of distinct labels.
    """
    _, records = _records(path)
    examples: list[LabeledExample] = []
    seen: set[str] = set()
    for n, rec in records:
        for name in REQUIRED_FIELDS:
            if name not in rec:
                raise IngestionError(f"{path}: missing field {name!r}", line=n)
            if not isinstance(rec[name], str):
                raise IngestionError(f"{path}: field {name!r} must be a string", line=n)
        if rec["id"] in seen:
            raise IngestionError(f"{path}: duplicate id {rec['id']!r}", line=n)
        if not tokenize(rec["text"]).words:
            raise IngestionError(f"{path}: empty text for id {rec['id']!r}", line=n)
        seen.add(rec["id"])
        try:
            examples.append(
                LabeledExample(
                    rec["id"],
                    rec["text"],
                    rec["label"],
                    rec.get("provenance", "original"),
                    rec.get("source_class"),
                    rec.get("attack_class"),
                )
            )
        except PriorGuideError as exc:
            raise IngestionError(f"{path}: {exc}", line=n) from None
    if not examples:
        raise IngestionError(f"{path}: no examples", line=0)
    return examples, LabelSpace(tuple(sorted({ex.label for ex in examples})))


def example_record(ex: LabeledExample) -> dict:
    rec = {"id": ex.id, "text": ex.text, "label": ex.label}
    if ex.provenance != "original":
        rec.update(provenance=ex.provenance, source_class=ex.source_class, attack_class=ex.attack_class)
    return rec


def write_jsonl(path: str | Path, records: Iterable[Mapping], run_config: Mapping | None = None) -> None:
    lines = [_meta_line(run_config)] + [_dumps(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_dataset(path: str | Path, examples: Sequence[LabeledExample], run_config: Mapping | None = None) -> None:
    write_jsonl(path, (example_record(ex) for ex in examples), run_config)


# Priors


def prior_record(v: AttributionVector) -> dict:
    if v.words is None:
        raise ArtifactError(f"{v.sentence_id}: prior without words cannot be serialized")
    return {
        "id": v.sentence_id,
        "words": list(v.words),
        "scores": [format_score(s) for s in v.scores],
        "method": v.method,
        "normalized": v.normalized,
    }


def write_priors(path: str | Path, priors: Mapping[str, AttributionVector], run_config: Mapping | None = None) -> None:
    write_jsonl(path, (prior_record(v) for v in priors.values()), run_config)


def read_priors(path: str | Path) -> dict[str, AttributionVector]:
    _, records = _records(path)
    out: dict[str, AttributionVector] = {}
    for n, rec in records:
        try:
            sid = rec["id"]
            if sid in out:
                raise IngestionError(f"{path}: duplicate prior id {sid!r}", line=n)
            scores = [float(s) for s in rec["scores"]]
            out[sid] = AttributionVector(sid, scores, rec["method"], bool(rec["normalized"]), rec["words"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"{path}: malformed prior record ({exc})", line=n) from None
        except InvalidInputError as exc:
            raise IngestionError(f"{path}: {exc}", line=n) from None
    return out


def check_priors_match(priors: Mapping[str, AttributionVector], examples: Sequence[LabeledExample]) -> None:
    """Every prior must name a known example and carry that example's words."""
    by_id = {ex.id: ex for ex in examples}
    for sid, v in priors.items():
        if sid not in by_id:
            raise ArtifactError(f"prior {sid!r} has no matching example")
        words = by_id[sid].sentence.words
        if v.words is not None and tuple(v.words) != words:
            raise ArtifactError(f"prior {sid!r} words do not match the dataset text")


# Reports, matrices and models


def write_report(path: str | Path, payload: Mapping, run_config: Mapping | None = None) -> dict:
    doc = {"run_config": dict(run_config or {}), **payload, "metadata": metadata()}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return doc


def read_report(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read report {path}: {exc}") from None


def write_csv_matrix(path: str | Path, names: Sequence[str], values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", *names])
    for name, row in zip(names, values):
        w.writerow([name, *(format_score(x) for x in row)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv_matrix(path: str | Path) -> tuple[tuple[str, ...], np.ndarray]:
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0][:1] != ["class"]:
        raise ArtifactError(f"{path}: not a class matrix")
    names = tuple(rows[0][1:])
    if [r[0] for r in rows[1:]] != list(names):
        raise ArtifactError(f"{path}: row and column classes differ")
    return names, np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def write_model(path: str | Path, model: ToyClassifier, run_config: Mapping | None = None, extra: Mapping | None = None) -> None:
    doc = model.to_json()
    doc["run_config"] = dict(run_config or {})
    if extra:
        doc.update(extra)
    doc["metadata"] = metadata()
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_model(path: str | Path) -> ToyClassifier:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read model {path}: {exc}") from None
    return ToyClassifier.from_json(doc)


def comparable_bytes(path: str | Path) -> bytes:
    """File content with every ``metadata`` field removed.

    JSON documents lose their top-level ``metadata``; JSONL headers lose
    theirs. Other files are returned unchanged.
    """
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    suffix = Path(path).suffix
    if suffix == ".json":
        doc = json.loads(text)
        doc.pop("metadata", None)
        return json.dumps(doc, sort_keys=True).encode("utf-8")
    if suffix == ".jsonl":
        lines = text.split("\n")
        if lines and lines[0].startswith('{"' + META_KEY):
            head = json.loads(lines[0])
            head[META_KEY].pop("metadata", None)
            lines[0] = _dumps(head)
        return "\n".join(lines).encode("utf-8")
    return raw
