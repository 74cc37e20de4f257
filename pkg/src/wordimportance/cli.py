"""Command-line driver.

Exit codes: 0 success, 1 invalid input or configuration, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import annotations as ann
from . import testbed
from .attribution import integrated_gradients, merge_to_words, word_importance
from .data import UNK, SubwordSplitter, Vocab, make_pair, read_lines, strip_hypothesis, write_lines
from .estimators import Method
from .evalharness import Perturbation, PerturbationSpec, ReplacementPool, TestItem, run_curve, write_curves
from .pipeline import (OUT_ENV, AnalysisSection, AnnotationPaths, ConfigError, ExperimentConfig, load_config,
                       run_analysis, run_pipeline)
from .seeding import subseed
from .seqmodel import TrainConfig, decode, load_checkpoint, save_checkpoint, train

log = logging.getLogger("wordimportance")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "runs"))


def _need_files(*paths) -> None:
    missing = [str(p) for p in paths if p and not os.path.isfile(p)]
    if missing:
        raise ConfigError([f"file not found: {p}" for p in missing])


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    _need_files(args.src, args.tgt)
    src, tgt = read_lines(args.src), read_lines(args.tgt)
    if len(src) != len(tgt):
        raise ConfigError([f"{args.src} has {len(src)} lines but {args.tgt} has {len(tgt)}"])
    splitter = SubwordSplitter.fit(src, args.subword_min_count)
    vocab = Vocab.build([splitter.split(s)[0] for s in src] + tgt)
    corpus = [make_pair(s, t, vocab, splitter) for s, t in zip(src, tgt)]
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, embed_dim=args.embed_dim,
                      hidden_dim=args.hidden_dim, seed=subseed(args.seed, "train") % 2**31,
                      optimizer=args.optimizer, log_every=args.log_every)
    model = train(corpus, cfg, vocab, splitter)
    out = Path(args.out) if args.out else _out_dir(None) / "model.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    print(f"saved {out} (vocab {len(vocab)}, {len(corpus)} pairs)")
    return EXIT_OK


def attribute_one(model, words: list[str], steps: int) -> dict:
    """Importance and contribution matrix for one sentence, as a JSON-ready record."""
    if not words:
        raise ConfigError(["empty sentence"])
    vocab = model.vocab
    pair = make_pair(words, [], vocab, model.splitter)
    oov = [w for w, (a, b) in zip(words, pair.subword_spans) if any(vocab.token(i) == UNK for i in pair.source[a:b])
           and w != UNK]
    hyp = strip_hypothesis(decode(model, pair.source, 1, 2 * pair.M + 10))
    pair = pair.with_target(hyp)
    cm = integrated_gradients(model, pair, steps)
    iv = merge_to_words(word_importance(cm), pair.subword_spans)
    return {
        "source": list(words),
        "source_tokens": [vocab.token(i) for i in pair.source],
        "target_tokens": [vocab.token(i) for i in hyp],
        "importance": [float(v) for v in iv.values],
        "matrix": [[float(v) for v in row] for row in cm.values],
        "steps": steps,
        "oov": oov,
    }


def format_attribution(rec: dict) -> str:
    lines = ["word importance:"]
    width = max(len(w) for w in rec["source"])
    for w, v in zip(rec["source"], rec["importance"]):
        lines.append(f"  {w:<{width}}  {v:.4f}  {'#' * int(round(40 * v))}")
    lines.append("")
    lines.append("contribution matrix (rows: source tokens, columns: output tokens):")
    cols = rec["target_tokens"]
    tw = max([len(t) for t in rec["source_tokens"]] + [4])
    cw = max([len(c) for c in cols] + [9])
    lines.append(" " * (tw + 2) + " ".join(f"{c:>{cw}}" for c in cols))
    for t, row in zip(rec["source_tokens"], rec["matrix"]):
        lines.append(f"  {t:<{tw}}" + " ".join(f"{v:>+{cw}.4f}" for v in row))
    return "\n".join(lines)


def cmd_attribute(args) -> int:
    _need_files(args.model)
    model = load_checkpoint(args.model)
    if model.vocab is None:
        raise ConfigError([f"{args.model} has no vocabulary"])
    words = " ".join(args.sentence).split()
    rec = attribute_one(model, words, args.steps)
    for w in rec["oov"]:
        print(f"notice: {w!r} is not in the vocabulary; mapped to {UNK}", file=sys.stderr)
    print(json.dumps(rec, indent=1) if args.json else format_attribution(rec))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _need_files(args.model, args.test, args.refs, args.pos, args.train_pos)
    model = load_checkpoint(args.model)
    test, refs = read_lines(args.test), read_lines(args.refs)
    problems = []
    if len(test) != len(refs):
        problems.append(f"{args.test} has {len(test)} lines but {args.refs} has {len(refs)}")
    methods, kind = [], Perturbation.MASK
    try:
        methods = [Method.parse(m) for m in args.estimators.split(",")]
    except ValueError as exc:
        problems.append(str(exc))
    try:
        kind = Perturbation.parse(args.perturbation)
    except ValueError:
        problems.append(f"unknown perturbation {args.perturbation!r}")
    pos = [[t.value for t in ts] for _, ts in ann.read_pos(args.pos)] if args.pos else None
    if pos is None and (Method.CONTENT in methods or kind is Perturbation.REPLACE):
        problems.append("--pos is required for the Content estimator and for replace perturbation")
    if problems:
        raise ConfigError(problems)
    pairs = [make_pair(w, [], model.vocab, model.splitter) for w in test]
    max_len = 2 * max(p.M for p in pairs) + 10
    items = [TestItem(p.with_target(strip_hypothesis(decode(model, p.source, args.beam, max_len))), r,
                      pos[i] if pos else None) for i, (p, r) in enumerate(zip(pairs, refs))]
    pool = None
    if kind is Perturbation.REPLACE:
        src = ann.read_pos(args.train_pos) if args.train_pos else None
        pool = (ReplacementPool.from_tagged([w for w, _ in src], [[t.value for t in ts] for _, ts in src])
                if src else ReplacementPool.from_tagged(test, pos))
    curves = []
    for m in methods:
        repeats = args.repeats if (m.stochastic or kind is Perturbation.REPLACE) else 1
        spec = PerturbationSpec(kind, m, args.k_max, repeats,
                                subseed(args.seed, "curve", list(Perturbation).index(kind), list(Method).index(m)),
                                args.steps, args.beam)
        curve = run_curve(model, items, spec, pool=pool, max_len=max_len)
        curves.append(curve)
        print(f"{m.value:<12}" + " ".join(f"k={k}:{b:6.2f}" for k, b, _ in curve.points))
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curves(curves, out / f"curves_{kind.value}.csv")
    print(f"wrote {out / f'curves_{kind.value}.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    _need_files(args.importance, args.test, args.refs, args.pos, args.alignment, args.depth, args.undertranslation)
    with open(args.importance, encoding="utf-8") as fh:
        records = json.load(fh)
    scores: dict[Method, list[np.ndarray]] = {}
    for rec in records:
        for name, est in rec["estimates"].items():
            vals = [-np.inf if v is None else v for v in est["scores"]]
            scores.setdefault(Method.parse(name), []).append(np.asarray(vals, dtype=np.float64))
    test = read_lines(args.test) if args.test else [r["source"] for r in records]
    refs = read_lines(args.refs) if args.refs else None
    if args.alignment and refs is None:
        raise ConfigError(["--refs is required with --alignment"])
    paths = AnnotationPaths(pos=args.pos, alignment=args.alignment, depth=args.depth,
                            undertranslation=args.undertranslation)
    skipped = {}

    def skip(section, reason):
        print(f"notice: skipping {section}: {reason}", file=sys.stderr)
        skipped[section] = reason

    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_analysis(scores, test, refs or [[]] * len(test), paths, AnalysisSection(), out, skip)
    report["skipped"] = skipped
    with open(out / "analysis.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote analysis to {out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        cfg.set(key, value)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.out_dir = str(_out_dir(args.out or cfg.out_dir or None))
    result = run_pipeline(cfg)
    print(f"wrote {len(result.manifest['outputs'])} files to {result.out_dir}")
    for section, reason in result.manifest["skipped"].items():
        print(f"skipped {section}: {reason}")
    return result.status


def cmd_testbed(args) -> int:
    """Write a synthetic toy-language corpus with gold annotations and a matching config."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    examples = testbed.toy_language(args.train + args.test, seed=args.seed)
    tr, te = examples[:args.train], examples[args.train:]
    write_lines(out / "train.src", [e.source for e in tr])
    write_lines(out / "train.tgt", [e.target for e in tr])
    write_lines(out / "test.src", [e.source for e in te])
    write_lines(out / "test.ref", [e.target for e in te])
    ann.write_pos(out / "train.pos", [e.source for e in tr], [e.pos for e in tr])
    ann.write_pos(out / "test.pos", [e.source for e in te], [e.pos for e in te])
    ann.write_alignment(out / "test.align", [e.alignment for e in te])
    ann.write_depth(out / "test.depth", [e.depth for e in te])
    config = {
        "data": {"train_src": "train.src", "train_tgt": "train.tgt", "test_src": "test.src", "test_ref": "test.ref"},
        "annotations": {"pos": "test.pos", "alignment": "test.align", "depth": "test.depth",
                        "train_pos": "train.pos"},
        "seed": args.seed,
    }
    with open(out / "config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=False)
    print(f"wrote {len(tr)} training and {len(te)} test pairs to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordimportance", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a translation model")
    t.add_argument("--src", required=True)
    t.add_argument("--tgt", required=True)
    t.add_argument("--out", help="checkpoint path (default: $%s/model.npz)" % OUT_ENV)
    t.add_argument("--steps", type=int, default=1500)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.003)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--embed-dim", type=int, default=32)
    t.add_argument("--hidden-dim", type=int, default=64)
    t.add_argument("--subword-min-count", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attribute", help="word importance and contribution matrix for one sentence")
    a.add_argument("--model", required=True)
    a.add_argument("--sentence", required=True, nargs="+")
    a.add_argument("--steps", type=int, default=300)
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_attribute)

    e = sub.add_parser("evaluate", help="perturbation curves on a test set")
    e.add_argument("--model", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--refs", required=True)
    e.add_argument("--perturbation", default="mask")
    e.add_argument("--estimators", default=",".join(m.value for m in Method))
    e.add_argument("--k-max", type=int, default=5)
    e.add_argument("--repeats", type=int, default=10)
    e.add_argument("--steps", type=int, default=300)
    e.add_argument("--beam", type=int, default=1)
    e.add_argument("--pos")
    e.add_argument("--train-pos")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("analyze", help="distribution tables, F1 and tree reports from importance.json")
    n.add_argument("--importance", required=True)
    n.add_argument("--test")
    n.add_argument("--refs")
    n.add_argument("--pos")
    n.add_argument("--alignment")
    n.add_argument("--depth")
    n.add_argument("--undertranslation")
    n.add_argument("--out")
    n.set_defaults(func=cmd_analyze)

    r = sub.add_parser("pipeline", help="run the full experiment from a config file")
    r.add_argument("--config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry, e.g. model.steps=200")
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_pipeline)

    b = sub.add_parser("testbed", help="write the synthetic toy-language corpus")
    b.add_argument("--out", required=True)
    b.add_argument("--train", type=int, default=2000)
    b.add_argument("--test", type=int, default=300)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_testbed)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ann.AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
