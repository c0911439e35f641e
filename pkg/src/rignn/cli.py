"""Command-line entry point.

    python -m rignn <command> [options]

Commands: ingest, topics, graph, train, eval, ablate, synth, stats.

Settings come from, in increasing precedence: built-in defaults, a
`key = value` config file given with --config, and command-line flags
(including repeated --set key=value). Results go to files; logs and errors go
to stderr. Exit status is 0 on success, 1 on a usage or validation error and 2
on a runtime failure. Every successful run writes a JSON manifest next to its
output recording the resolved config, seeds, input and output hashes and the
wall-clock time.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .ablation import run_ablations
from .evaluation import evaluate_baseline
from .graph import build_graph, format_edges
from .ingest import corpus_stats, load_bundle, preprocess, read_reviews, save_bundle, sequence_split
from .model import ModelConfig
from .numcore import NumericalError, ParameterSet
from .synth import SynthSpec, dependency_recovery, generate, save_corpus
from .topics import build_corpus, fit_lda, load_dominant
from .train import (
    TrainConfig, build_model, evaluate_model, split_validation, train, use_params,
)

log = logging.getLogger("rignn")


class UsageError(Exception):
    """Bad arguments or configuration: exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- config


def read_config(path: str | Path) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and `#` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve(args, flag_keys: Sequence[str]) -> dict[str, str]:
    """Defaults < config file < flags."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in flag_keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def _coerce(cls, values: dict[str, str]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            continue
        default = getattr(cls, key)
        if isinstance(default, bool):
            kwargs[key] = raw.lower() in ("1", "true", "yes")
        else:
            kwargs[key] = type(default)(raw)
    return cls(**kwargs)


def _get(values: dict[str, str], key: str, default, kind=int):
    if key not in values:
        return default
    try:
        return kind(values[key])
    except ValueError as exc:
        raise UsageError(f"{key}: cannot parse {values[key]!r} as {kind.__name__}") from exc


def check_keys(values: dict[str, str], *classes, extra: Sequence[str] = ()) -> None:
    known = set(extra)
    for cls in classes:
        known |= {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")


# ---------------------------------------------------------------- manifest


def content_hash(path: str | Path) -> str:
    """sha256 of a file, or of the sorted (name, hash) list of a directory."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for child in sorted(x for x in p.rglob("*") if x.is_file() and x.name != "manifest.json"):
            h.update(str(child.relative_to(p)).encode())
            h.update(content_hash(child).encode())
    else:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def write_manifest(target: Path, command: str, config: dict, seeds: Sequence[int],
                   inputs: Sequence[str | Path], outputs: Sequence[str | Path],
                   started: float) -> Path:
    doc = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "inputs": {str(p): content_hash(p) for p in inputs},
        "outputs": {str(p): content_hash(p) for p in outputs},
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        "versions": {"rignn": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: str | Path, doc) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return p


def _model_train_configs(values):
    check_keys(values, ModelConfig, TrainConfig)
    try:
        return _coerce(ModelConfig, values), _coerce(TrainConfig, values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    t0 = time.perf_counter()
    values = resolve(args, ["min_count", "window_days", "case"])
    check_keys(values, extra=["min_count", "window_days", "case"])
    min_count = _get(values, "min_count", 5)
    window = _get(values, "window_days", 7)
    case = _get(values, "case", 1)
    if case not in (1, 2) or min_count < 1 or window < 1:
        raise UsageError("case must be 1 or 2; min_count and window_days must be positive")
    interactions, errors = read_reviews(args.input)
    if errors:
        log.warning("skipped %d malformed records", errors)
    bundle = preprocess(interactions, min_count=min_count, window_days=window, case=case)
    bundle.meta["malformed_records"] = errors
    out = Path(args.out)
    save_bundle(bundle, out)
    write_manifest(out, "ingest", {"min_count": min_count, "window_days": window, "case": case},
                   [], [args.input], [out / "bundle.json"], t0)
    return 0


def cmd_topics(args) -> int:
    t0 = time.perf_counter()
    values = resolve(args, ["num_topics", "alpha", "beta", "sweeps", "seed", "chains"])
    check_keys(values, extra=["num_topics", "alpha", "beta", "sweeps", "seed", "chains"])
    bundle = load_bundle(args.corpus)
    T = _get(values, "num_topics", 10)
    alpha = _get(values, "alpha", None, float)
    cfg = {"num_topics": T, "alpha": alpha, "beta": _get(values, "beta", 0.01, float),
           "sweeps": _get(values, "sweeps", 500), "seed": _get(values, "seed", 0),
           "chains": _get(values, "chains", 4)}
    try:
        corpus = build_corpus(bundle.catalog.review_doc)
        model = fit_lda(corpus, T, alpha=alpha, beta=cfg["beta"], iterations=cfg["sweeps"],
                        seed=cfg["seed"], chains=cfg["chains"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    write_manifest(out, "topics", cfg, [cfg["seed"]], [Path(args.corpus)], [out], t0)
    return 0


def cmd_graph(args) -> int:
    session = [s.strip() for s in args.session.split(",") if s.strip()]
    try:
        topics = [int(t) for t in args.topics.split(",")] if args.topics else []
    except ValueError as exc:
        raise UsageError(f"--topics must be integers: {args.topics!r}") from exc
    if not session:
        raise UsageError("--session must list at least one item")
    labels = sorted(set(session))
    index = {name: i for i, name in enumerate(labels)}
    dominant = np.full(len(labels), -1, dtype=np.int64)
    if topics:
        if len(topics) != len(session):
            raise UsageError("--topics must give one topic per session position")
        for name, t in zip(session, topics):
            if dominant[index[name]] not in (-1, t):
                raise UsageError(f"item {name} given two different topics")
            dominant[index[name]] = t
    g = build_graph([index[s] for s in session], dominant, ignore_topics=args.ignore_topics)
    text = format_edges(g, labels) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    values = resolve(args, ["epochs", "seed", "learning_rate", "batch_size", "k", "variant"])
    mcfg, tcfg = _model_train_configs(values)
    bundle = load_bundle(args.bundle)
    dominant = load_dominant(args.topics)
    try:
        model = build_model(bundle, dominant, mcfg, word_vectors=args.word_vectors)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    case = bundle.meta.get("case", 1)
    fit, val = split_validation(bundle.train, tcfg.val_fraction)
    fit_ex = [ex for s in fit for ex in sequence_split(s, case)]
    val_ex = [ex for s in val for ex in sequence_split(s, case)]
    out = Path(args.out)
    res = train(model, fit_ex, tcfg, val_examples=val_ex or None, out_dir=out)
    if res.diverged:
        log.error("training diverged; last good parameters kept")
        return 2
    config = {"model": mcfg.to_dict(), "train": asdict(tcfg)}
    _write_json(out / "config.json", config)
    outputs = sorted(p for p in out.iterdir() if p.name != "manifest.json")
    write_manifest(out, "train", config, [mcfg.seed, tcfg.seed],
                   [args.bundle, args.topics], outputs, t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    try:
        ks = [int(k) for k in args.k.split(",")]
    except ValueError as exc:
        raise UsageError(f"--k must be comma-separated integers: {args.k!r}") from exc
    bundle = load_bundle(args.bundle)
    examples = bundle.test_examples()
    if not examples:
        raise UsageError("bundle has no test examples")
    if min(ks) < 1 or max(ks) > bundle.catalog.m:
        raise UsageError(f"--k values must lie in [1, {bundle.catalog.m}] for this catalog")
    n = min(max(20, max(ks)), bundle.catalog.m)
    inputs = [args.bundle]
    if args.baseline:
        sessions = [s.items for s in bundle.train]
        metrics = evaluate_baseline(args.baseline, sessions, examples, bundle.catalog.m, ks, n=n)
        config = {"baseline": args.baseline, "k": ks}
    else:
        if not args.checkpoint or not args.topics:
            raise UsageError("--checkpoint and --topics are required unless --baseline is given")
        params, meta = ParameterSet.load(args.checkpoint)
        if "model" not in meta:
            raise UsageError(f"{args.checkpoint}: checkpoint carries no model config")
        mcfg = ModelConfig.from_dict(meta["model"])
        model = build_model(bundle, load_dominant(args.topics), mcfg)
        use_params(model, params)
        metrics = evaluate_model(model, examples, ks, n)
        config = {"model": mcfg.to_dict(), "k": ks}
        inputs += [args.checkpoint, args.topics]
    out = _write_json(args.out, {"metrics": metrics, "examples": len(examples), **config})
    write_manifest(out, "eval", config, [], inputs, [out], t0)
    return 0


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    values = resolve(args, ["epochs", "learning_rate", "batch_size", "k"])
    mcfg, tcfg = _model_train_configs(values)
    bundle = load_bundle(args.bundle)
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    report = run_ablations(bundle, load_dominant(args.topics), mcfg, tcfg, seeds)
    config = {"model": mcfg.to_dict(), "train": asdict(tcfg)}
    out = _write_json(args.out, {**report.to_dict(), "config": config})
    write_manifest(out, "ablate", config, seeds, [args.bundle, args.topics], [out], t0)
    return 0


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    values = resolve(args, ["seed", "session_count", "interleave_prob"])
    if args.spec:
        values = {**read_config(args.spec), **values}
    check_keys(values, SynthSpec)
    try:
        spec = _coerce(SynthSpec, values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    corpus = generate(spec)
    out = Path(args.out)
    save_corpus(corpus, out)
    rec = dependency_recovery(corpus.sessions, corpus.truth, corpus.topics)
    _write_json(out / "recovery.json", rec)
    outputs = [out / n for n in ("bundle.json", "oracle.topics", "ground_truth.json", "recovery.json")]
    write_manifest(out, "synth", asdict(spec), [spec.seed], [], outputs, t0)
    return 0


def cmd_stats(args) -> int:
    stats = corpus_stats(load_bundle(args.bundle))
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_json(args.out, stats)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rignn", description=__doc__.split("\n\n")[0],
                epilog="Config precedence: flags > --config file > defaults.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", help="raw review records -> session bundle")
    s.add_argument("--input", required=True, help="JSON-lines reviews, optionally gzipped")
    s.add_argument("--out", required=True, help="bundle directory")
    s.add_argument("--min-count", dest="min_count", type=int)
    s.add_argument("--window-days", dest="window_days", type=int)
    s.add_argument("--case", type=int)
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("topics", help="fit LDA on per-item review documents")
    s.add_argument("--corpus", required=True, help="bundle directory")
    s.add_argument("--num-topics", dest="num_topics", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--sweeps", type=int)
    s.add_argument("--chains", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_topics)

    s = sub.add_parser("graph", help="print the AIG and RIG of one session")
    s.add_argument("--session", required=True, help='comma-separated items, e.g. "a,b,c"')
    s.add_argument("--topics", help='comma-separated topic per position, e.g. "0,1,0"')
    s.add_argument("--ignore-topics", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_graph)

    for name, func, help_ in (("train", cmd_train, "train a model"),
                              ("ablate", cmd_ablate, "full model vs ablations over seeds")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--bundle", required=True)
        s.add_argument("--topics", required=True, help="topic model or dominant-topic file")
        s.add_argument("--config")
        s.add_argument("--set", action="append", metavar="KEY=VALUE")
        s.add_argument("--epochs", type=int)
        s.add_argument("--learning-rate", dest="learning_rate", type=float)
        s.add_argument("--batch-size", dest="batch_size", type=int)
        s.add_argument("--k", type=int, help="number of stacked graph layers")
        s.add_argument("--out", required=True)
        if name == "train":
            s.add_argument("--seed", type=int)
            s.add_argument("--variant", choices=["full", "no_ril", "no_topic", "no_review"])
            s.add_argument("--word-vectors", dest="word_vectors")
        else:
            s.add_argument("--seeds", type=int, default=5)
            s.add_argument("--first-seed", dest="first_seed", type=int, default=0)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="score a checkpoint or a baseline on the test split")
    s.add_argument("--bundle", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--topics")
    s.add_argument("--baseline", choices=["s_pop", "s_knn"])
    s.add_argument("--k", default="10,20")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a planted-dependency corpus")
    s.add_argument("--spec", help="key = value file of generator settings")
    s.add_argument("--seed", type=int)
    s.add_argument("--session-count", dest="session_count", type=int)
    s.add_argument("--interleave-prob", dest="interleave_prob", type=float)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stats", help="corpus statistics of a bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=args.log_level, stream=sys.stderr,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"rignn: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, NumericalError, ValueError, KeyError) as exc:
        print(f"rignn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
