"""Command-line entry point.

Each subcommand reads and writes only the files named by its flags.
Parameters merge as defaults <- ``--config`` JSON file <- explicit flags.
On failure a JSON error document goes to stderr and the exit code is
nonzero (1 for pipeline errors, 2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from priorguide import artifacts
from priorguide.adversarial import (
    DEFAULT_POOL,
    GeneratorBackend,
    build_adversarial_set,
    keywords_by_class,
    select_adversarial_targets,
)
from priorguide.attribution import IgConfig
from priorguide.cap_solver import CapConfig
from priorguide.core import pearson
from priorguide.errors import ArtifactError, InvalidInputError, PriorGuideError, UndefinedCorrelationError
from priorguide.evaluation import (
    DEFAULT_LEVELS,
    DEFAULT_RATIO,
    OverlapMatrix,
    accuracy,
    class_similarity,
    error_level_counts,
    faithfulness,
    keyword_overlap_matrix,
    misclass_vs_overlap,
)
from priorguide.lime_prior import LimeConfig
from priorguide.oracle import DEFAULT_INSTRUCTIONS, OracleConfig, PromptTemplate, make_oracle
from priorguide.pipeline import extract_priors, fuse_priors, normalize_all
from priorguide.synthetic import SyntheticCorpusSpec, generate_synthetic
from priorguide.toy_model import Vocabulary, init_model
from priorguide.training import TrainConfig, train

# Flags that steer the process but are not part of an artifact's provenance.
_NOT_CONFIG = {"config", "force", "handler", "command", "analysis"}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # pragma: no cover - exercised through main()
        _emit_error("usage_error", message)
        raise SystemExit(2)


def _emit_error(code: str, message: str, **extra: Any) -> None:
    print(json.dumps({"error": {"code": code, "message": message, **extra}}, sort_keys=True), file=sys.stderr)


def _run_config(args: argparse.Namespace) -> dict:
    doc = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    doc["command"] = args.command if not getattr(args, "analysis", None) else f"{args.command} {args.analysis}"
    return doc


def _guard(path: str | Path, run_config: dict, force: bool) -> None:
    """Refuse to overwrite an artifact produced under a different configuration."""
    path = Path(path)
    if force or not path.exists():
        return
    try:
        if path.suffix == ".jsonl":
            old = (artifacts.read_header(path) or {}).get("run_config")
        elif path.suffix == ".json":
            old = artifacts.read_report(path).get("run_config")
        else:
            return
    except PriorGuideError:
        old = None
    if old is not None and old != json.loads(json.dumps(run_config)):
        raise ArtifactError(f"{path} exists with a different run configuration; pass --force to overwrite")


def _oracle_from(args: argparse.Namespace):
    if args.backend == "scripted" and not args.oracle:
        raise InvalidInputError("the scripted backend needs --oracle pointing at a definition file")
    cfg = OracleConfig(
        backend=args.backend,
        endpoint=args.endpoint,
        model_name=args.model_name,
        max_in_flight=args.max_in_flight,
        cache_dir=args.cache_dir,
        script=args.oracle,
        probability_floor=args.probability_floor,
    )
    return make_oracle(cfg)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("oracle")
    g.add_argument("--backend", choices=["scripted", "remote"], default="scripted")
    g.add_argument("--oracle", help="scripted oracle definition (JSON)")
    g.add_argument("--endpoint", default=OracleConfig.endpoint)
    g.add_argument("--model-name", default="")
    g.add_argument("--max-in-flight", type=int, default=OracleConfig.max_in_flight)
    g.add_argument("--cache-dir")
    g.add_argument("--probability-floor", type=float, default=OracleConfig.probability_floor)


# Commands


def cmd_synth(args: argparse.Namespace) -> dict:
    spec_doc = dict(args.spec or {})
    for key in ("seed", "n_classes", "n_pairs", "train_per_class", "val_per_class", "test_per_class"):
        if getattr(args, key) is not None:
            spec_doc[key] = getattr(args, key)
    spec = SyntheticCorpusSpec.from_json(spec_doc) if spec_doc else SyntheticCorpusSpec()
    corpus = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _run_config(args)
    cfg["spec"] = spec.to_json()
    paths = {split: out / f"{split}.jsonl" for split in ("train", "val", "test")}
    paths["oracle"] = out / "oracle.json"
    for p in paths.values():
        _guard(p, cfg, args.force)
    for split in ("train", "val", "test"):
        artifacts.write_dataset(paths[split], getattr(corpus, split), cfg)
    artifacts.write_report(paths["oracle"], corpus.oracle_definition(), cfg)
    return {"outputs": {k: str(v) for k, v in paths.items()}}


def cmd_extract_priors(args: argparse.Namespace) -> dict:
    examples, labels = artifacts.ingest_dataset(args.data)
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    if args.method == "ig":
        if not args.model:
            raise InvalidInputError("--method ig needs --model")
        model = artifacts.read_model(args.model)
        priors = extract_priors(examples, "ig", model=model, ig=IgConfig(steps=args.ig_steps))
    else:
        oracle = _oracle_from(args)
        if args.method == "cap":
            template = PromptTemplate(instructions=args.instructions or DEFAULT_INSTRUCTIONS, labels=labels)
            cap = CapConfig(n=args.n, lam=args.lam, seed=args.seed, template=template)
            priors = extract_priors(examples, "cap", oracle=oracle, labels=labels, cap=cap, workers=args.workers)
        else:
            lime = LimeConfig(
                n_samples=args.n, kernel_width=args.kernel_width, lam=args.lam, seed=args.seed, target=args.lime_target
            )
            priors = extract_priors(examples, "lime", oracle=oracle, lime=lime, workers=args.workers)
    artifacts.write_priors(args.out, priors, cfg)
    return {"outputs": {"priors": args.out}, "count": len(priors)}


def cmd_fuse(args: argparse.Namespace) -> dict:
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    sets = [artifacts.read_priors(p) for p in args.inputs]
    for other, path in zip(sets[1:], args.inputs[1:]):
        for sid, v in other.items():
            ref = sets[0].get(sid)
            if ref is not None and ref.words != v.words:
                raise ArtifactError(f"{path}: words for {sid!r} differ from {args.inputs[0]}")
    fused = fuse_priors(sets, args.mode)
    artifacts.write_priors(args.out, fused, cfg)
    return {"outputs": {"priors": args.out}, "count": len(fused)}


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        beta=args.beta,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        clip_norm=args.clip_norm,
        seed=args.seed,
        ig=IgConfig(steps=args.ig_steps),
        early_stop_patience=args.patience,
        align_warmup_epochs=args.warmup,
    )


def cmd_train(args: argparse.Namespace) -> dict:
    examples, labels = artifacts.ingest_dataset(args.data)
    val = artifacts.ingest_dataset(args.val)[0] if args.val else None
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    priors = None
    if args.priors:
        priors = artifacts.read_priors(args.priors)
        artifacts.check_priors_match(priors, examples)
        priors = normalize_all(priors)
    tcfg = _train_config(args)
    vocab = Vocabulary.build(ex.sentence for ex in examples)
    init = init_model(vocab, labels, args.width, args.seed, args.hidden)
    report = train(init, examples, priors, tcfg, val)
    artifacts.write_model(args.out, report.model, cfg, {"train_report": report.to_json()})
    result = {"outputs": {"model": args.out}, "best_epoch": report.best_epoch, "epochs_run": len(report.epochs)}
    if args.report:
        _guard(args.report, cfg, args.force)
        artifacts.write_report(args.report, {"train_report": report.to_json()}, cfg)
        result["outputs"]["report"] = args.report
    return result


def cmd_evaluate(args: argparse.Namespace) -> dict:
    model = artifacts.read_model(args.model)
    examples, _ = artifacts.ingest_dataset(args.data)
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"acc", "com", "suf"}
    if unknown or not metrics:
        raise InvalidInputError(f"unknown metrics {sorted(unknown)}; choose from acc, com, suf")
    out: dict[str, Any] = {"n": len(examples)}
    if "acc" in metrics:
        out["acc"] = accuracy(model, examples)
    if {"com", "suf"} & set(metrics):
        faith = faithfulness(model, examples, args.ratio, IgConfig(steps=args.ig_steps))
        if "com" in metrics:
            out["com"] = faith.comprehensiveness
        if "suf" in metrics:
            out["suf"] = faith.sufficiency
        out["ratio"] = args.ratio
    artifacts.write_report(args.out, {"metrics": out}, cfg)
    return {"outputs": {"report": args.out}, "metrics": out}


def _write_matrix_outputs(args, cfg: dict, payload: dict, names, values) -> dict:
    _guard(args.out, cfg, args.force)
    artifacts.write_report(args.out, payload, cfg)
    outputs = {"report": args.out}
    if args.csv:
        artifacts.write_csv_matrix(args.csv, names, values)
        outputs["csv"] = args.csv
    return {"outputs": outputs}


def cmd_analyze_overlap(args: argparse.Namespace) -> dict:
    examples, _ = artifacts.ingest_dataset(args.data)
    priors = artifacts.read_priors(args.priors)
    artifacts.check_priors_match(priors, examples)
    kw = keywords_by_class(examples, normalize_all(priors), args.k)
    ov = keyword_overlap_matrix({c: set(k.keywords) for c, k in kw.items()})
    payload = {
        "classes": list(ov.classes),
        "values": ov.values.tolist(),
        "keywords": {c: list(k.keywords) for c, k in kw.items()},
    }
    return _write_matrix_outputs(args, _run_config(args), payload, ov.classes, ov.values)


def cmd_analyze_misclass(args: argparse.Namespace) -> dict:
    model = artifacts.read_model(args.model)
    examples, _ = artifacts.ingest_dataset(args.data)
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    doc = artifacts.read_report(args.overlap)
    if "classes" not in doc or "values" not in doc:
        raise ArtifactError(f"{args.overlap}: not an overlap report")
    ov = OverlapMatrix(tuple(doc["classes"]), np.array(doc["values"]))
    rows = misclass_vs_overlap(model, examples, ov, args.levels)
    counts = error_level_counts(rows, args.levels)
    payload = {"levels": args.levels, "level_counts": counts, "errors": [asdict(r) for r in rows]}
    artifacts.write_report(args.out, payload, cfg)
    return {"outputs": {"report": args.out}, "level_counts": counts}


def cmd_analyze_similarity(args: argparse.Namespace) -> dict:
    model = artifacts.read_model(args.model)
    examples, _ = artifacts.ingest_dataset(args.data)
    sim = class_similarity(model, examples)
    names = model.labels.names
    payload = {"classes": list(names), "values": sim.tolist()}
    return _write_matrix_outputs(args, _run_config(args), payload, names, sim)


def cmd_analyze_pearson(args: argparse.Namespace) -> dict:
    cfg = _run_config(args)
    _guard(args.out, cfg, args.force)
    a = normalize_all(artifacts.read_priors(args.a))
    b = normalize_all(artifacts.read_priors(args.b))
    ids = [k for k in a if k in b]
    if not ids:
        raise InvalidInputError("the two prior files share no sentence ids")
    per, skipped = [], 0
    for sid in ids:
        if a[sid].words != b[sid].words:
            raise ArtifactError(f"words for {sid!r} differ between the prior files")
        try:
            per.append(pearson(a[sid].scores, b[sid].scores))
        except UndefinedCorrelationError:
            skipped += 1
    pooled = pearson(
        np.concatenate([a[k].as_array() for k in ids]), np.concatenate([b[k].as_array() for k in ids])
    )
    payload = {
        "pooled": pooled,
        "mean_per_sentence": float(np.mean(per)) if per else None,
        "n_sentences": len(ids),
        "n_undefined": skipped,
    }
    artifacts.write_report(args.out, payload, cfg)
    return {"outputs": {"report": args.out}, "pooled": pooled}


def cmd_gen_adversarial(args: argparse.Namespace) -> dict:
    test, _ = artifacts.ingest_dataset(args.data)
    kw_examples, _ = artifacts.ingest_dataset(args.keywords_data)
    priors = artifacts.read_priors(args.priors)
    artifacts.check_priors_match(priors, kw_examples)
    cfg = _run_config(args)
    skips_path = Path(args.out).with_suffix(".skips.jsonl")
    _guard(args.out, cfg, args.force)
    _guard(skips_path, cfg, args.force)
    kw = keywords_by_class(kw_examples, normalize_all(priors), args.k)
    ov = keyword_overlap_matrix({c: set(k.keywords) for c, k in kw.items()})
    plan = select_adversarial_targets(ov, args.n_targets, args.pool, args.seed)
    backend = GeneratorBackend(args.generator, _oracle_from(args) if args.generator == "oracle_prompted" else None)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not modes or set(modes) - {"addition", "replacement"}:
        raise InvalidInputError("--modes takes addition and/or replacement")
    adv = build_adversarial_set(test, kw, plan, modes, backend, args.seed)
    artifacts.write_dataset(args.out, adv.examples, cfg)
    artifacts.write_jsonl(skips_path, (asdict(s) for s in adv.skips), cfg)
    return {
        "outputs": {"examples": args.out, "skips": str(skips_path)},
        "count": len(adv.examples),
        "skipped": len(adv.skips),
        "targets": {k: list(v) for k, v in plan.targets.items()},
    }


# Parser


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="priorguide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    leaves: dict[str, argparse.ArgumentParser] = {}

    def leaf(p: argparse.ArgumentParser, name: str, handler: Callable) -> argparse.ArgumentParser:
        p.add_argument("--config", help="JSON file of flag defaults")
        p.add_argument("--force", action="store_true", help="overwrite artifacts made under another config")
        p.set_defaults(handler=handler)
        leaves[name] = p
        return p

    p = leaf(sub.add_parser("synth", help="write the synthetic confusable-class corpus"), "synth", cmd_synth)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--n-pairs", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--val-per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.set_defaults(spec=None)

    p = leaf(sub.add_parser("extract-priors", help="CAP, LIME or IG priors for a dataset"), "extract-priors", cmd_extract_priors)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["cap", "lime", "ig"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=CapConfig.n, help="masks per sentence")
    p.add_argument("--lam", type=float, default=CapConfig.lam)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel-width", type=float, default=LimeConfig.kernel_width)
    p.add_argument("--lime-target", choices=["prob", "z"], default="prob")
    p.add_argument("--instructions")
    p.add_argument("--model", help="trained model (IG priors)")
    p.add_argument("--ig-steps", type=int, default=IgConfig.steps)
    p.add_argument("--workers", type=int, default=1)
    _add_oracle_flags(p)

    p = leaf(sub.add_parser("fuse", help="normalize and aggregate prior files"), "fuse", cmd_fuse)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--mode", choices=["mean", "max"], default="mean")
    p.add_argument("--out", required=True)

    d = TrainConfig()
    p = leaf(sub.add_parser("train", help="train the toy classifier, optionally prior-guided"), "train", cmd_train)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--priors")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--clip-norm", type=float, default=d.clip_norm)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--ig-steps", type=int, default=d.ig.steps)
    p.add_argument("--patience", type=int, default=d.early_stop_patience)
    p.add_argument("--warmup", type=int, default=d.align_warmup_epochs)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)

    p = leaf(sub.add_parser("evaluate", help="accuracy and rationale faithfulness"), "evaluate", cmd_evaluate)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="acc,com,suf")
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO)
    p.add_argument("--ig-steps", type=int, default=IgConfig.steps)
    p.add_argument("--out", required=True)

    analyze = sub.add_parser("analyze", help="overlap, error and similarity diagnostics")
    asub = analyze.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    p = leaf(asub.add_parser("overlap", help="class keyword-overlap matrix"), "analyze overlap", cmd_analyze_overlap)
    p.add_argument("--data", required=True)
    p.add_argument("--priors", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p = leaf(asub.add_parser("misclass", help="errors by overlap level"), "analyze misclass", cmd_analyze_misclass)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--overlap", required=True, help="report written by 'analyze overlap'")
    p.add_argument("--levels", type=int, default=DEFAULT_LEVELS)
    p.add_argument("--out", required=True)
    p = leaf(asub.add_parser("similarity", help="class mean-embedding cosine matrix"), "analyze similarity", cmd_analyze_similarity)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p = leaf(asub.add_parser("pearson", help="correlation between two prior files"), "analyze pearson", cmd_analyze_pearson)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)

    p = leaf(sub.add_parser("gen-adversarial", help="keyword addition/replacement test set"), "gen-adversarial", cmd_gen_adversarial)
    p.add_argument("--data", required=True, help="test split to perturb")
    p.add_argument("--keywords-data", required=True, help="split the priors were extracted on")
    p.add_argument("--priors", required=True, help="CAP priors for --keywords-data")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-targets", type=int, default=1)
    p.add_argument("--pool", type=int, default=DEFAULT_POOL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", default="addition,replacement")
    p.add_argument("--generator", choices=["rule_based", "oracle_prompted"], default="rule_based")
    p.add_argument("--out", required=True)
    _add_oracle_flags(p)
    return parser, leaves


def _leaf_name(argv: Sequence[str], leaves: dict) -> str | None:
    words = [a for a in argv if not a.startswith("-")]
    for n in (2, 1):
        name = " ".join(words[:n])
        if name in leaves:
            return name
    return None


def _apply_config_file(argv: Sequence[str], parser, leaves) -> None:
    """Install a ``--config`` file's values as the leaf parser's defaults."""
    name = _leaf_name(argv, leaves)
    if name is None:
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise ArtifactError("config file must hold a JSON object")
    p = leaves[name]
    dests = {a.dest for a in p._actions} | {k for k in p._defaults}
    norm = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(norm) - dests - _NOT_CONFIG)
    if unknown:
        raise ArtifactError(f"config keys not accepted by {name!r}: {unknown}")
    p.set_defaults(**{k: v for k, v in norm.items() if k not in _NOT_CONFIG})
    # A config value satisfies a required flag.
    for a in p._actions:
        if a.dest in norm:
            a.required = False


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    try:
        _apply_config_file(argv, parser, leaves)
        args = parser.parse_args(argv)
        result = args.handler(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except PriorGuideError as exc:
        extra = {"line": exc.line} if getattr(exc, "line", None) is not None else {}
        _emit_error(exc.code, str(exc), type=type(exc).__name__, **extra)
        return 1
    except OSError as exc:
        _emit_error("io_error", str(exc), type=type(exc).__name__)
        return 1
    print(json.dumps({"ok": True, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
