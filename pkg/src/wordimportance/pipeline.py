"""End-to-end experiment: train, translate, attribute, perturb, analyze, report."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import annotations as ann
from .analysis import (TreeConfig, detect_undertranslation, fertility_distribution, length_normalize,
                       pos_distribution, token_features, tree_correlation, write_distribution, write_f1_report,
                       write_tree_report)
from .attribution import integrated_gradients, merge_to_words, word_importance
from .bleu import bleu
from .data import SubwordSplitter, Vocab, make_pair, read_lines, strip_hypothesis
from .estimators import Method, estimate
from .evalharness import (Perturbation, PerturbationSpec, ReplacementPool, TestItem, run_curve, write_curves)
from .seeding import subseed
from .seqmodel import TrainConfig, decode, greedy_batch, save_checkpoint, train

log = logging.getLogger(__name__)

OUT_ENV = "WORDIMP_OUT"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class DataPaths:
    train_src: str = ""
    train_tgt: str = ""
    test_src: str = ""
    test_ref: str = ""


@dataclass
class AnnotationPaths:
    pos: str | None = None
    alignment: str | None = None
    depth: str | None = None
    undertranslation: str | None = None
    train_pos: str | None = None


@dataclass
class ModelSection:
    embed_dim: int = 32
    hidden_dim: int = 64
    steps: int = 1500
    batch_size: int = 32
    lr: float = 0.003
    optimizer: str = "adam"
    clip_norm: float = 5.0
    subword_min_count: int = 1


@dataclass
class EvaluationSection:
    estimators: list[str] = field(default_factory=lambda: [m.value for m in Method])
    perturbations: list[str] = field(default_factory=lambda: ["mask"])
    k_max: int = 5
    repeats: int = 10
    beam: int = 1
    max_len: int | None = None


@dataclass
class AnalysisSection:
    thresholds: list[float] = field(default_factory=lambda: [5.0, 10.0, 15.0])
    f1_methods: list[str] = field(default_factory=lambda: ["Attention", "Erasure", "Attribution"])
    tree_max_depth: int = 6
    tree_min_leaf: int = 20


@dataclass
class ExperimentConfig:
    data: DataPaths = field(default_factory=DataPaths)
    annotations: AnnotationPaths = field(default_factory=AnnotationPaths)
    model: ModelSection = field(default_factory=ModelSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    attribution_steps: int = 300
    seed: int = 0
    out_dir: str = ""
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        d = dict(d or {})
        sections = {"data": DataPaths, "annotations": AnnotationPaths, "model": ModelSection,
                    "evaluation": EvaluationSection, "analysis": AnalysisSection}
        problems = []
        kwargs: dict[str, Any] = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key not in known:
                problems.append(f"unknown config key {key!r}")
            elif key in sections:
                sub = sections[key]
                names = {f.name for f in dataclasses.fields(sub)}
                bad = set(value or {}) - names
                problems += [f"unknown key {key}.{b}" for b in sorted(bad)]
                kwargs[key] = sub(**{k: v for k, v in (value or {}).items() if k in names})
            else:
                kwargs[key] = value
        if problems:
            raise ConfigError(problems)
        cfg = cls(**kwargs)
        if base_dir is not None:
            cfg.resolve_paths(Path(base_dir))
        return cfg

    def resolve_paths(self, base: Path) -> None:
        for section in (self.data, self.annotations):
            for f in dataclasses.fields(section):
                v = getattr(section, f.name)
                if v and not os.path.isabs(v):
                    setattr(section, f.name, str(base / v))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir", None)
        d.pop("jobs", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def set(self, dotted: str, value: Any) -> None:
        """Override ``section.key`` (or a top-level key) with a YAML-parsed value."""
        parts = dotted.split(".")
        target = self
        for p in parts[:-1]:
            if not hasattr(target, p):
                raise ConfigError([f"unknown config section {p!r}"])
            target = getattr(target, p)
        if not hasattr(target, parts[-1]):
            raise ConfigError([f"unknown config key {dotted!r}"])
        setattr(target, parts[-1], yaml.safe_load(value) if isinstance(value, str) else value)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return ExperimentConfig.from_dict(raw, Path(path).resolve().parent)


# ----------------------------------------------------------------- validation


def _count_lines(path) -> int:
    with open(path, encoding="utf-8") as fh:
        return len(fh.read().splitlines())


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every problem with the configuration, not just the first."""
    problems = []
    for name in ("train_src", "train_tgt", "test_src", "test_ref"):
        p = getattr(cfg.data, name)
        if not p:
            problems.append(f"data.{name} is required")
        elif not os.path.isfile(p):
            problems.append(f"data.{name}: file not found: {p}")
    for f in dataclasses.fields(cfg.annotations):
        p = getattr(cfg.annotations, f.name)
        if p and not os.path.isfile(p):
            problems.append(f"annotations.{f.name}: file not found: {p}")
    for name in ("estimators",):
        for e in getattr(cfg.evaluation, name):
            try:
                Method.parse(e)
            except ValueError as exc:
                problems.append(str(exc))
    for k in cfg.evaluation.perturbations:
        try:
            Perturbation.parse(k)
        except ValueError:
            problems.append(f"unknown perturbation {k!r}")
    if cfg.attribution_steps < 1:
        problems.append("attribution_steps must be >= 1")
    if cfg.evaluation.k_max < 0 or cfg.evaluation.repeats < 1 or cfg.evaluation.beam < 1:
        problems.append("evaluation.k_max must be >= 0, repeats and beam >= 1")
    if cfg.jobs < 1:
        problems.append("jobs must be >= 1")
    if problems:
        return problems

    if _count_lines(cfg.data.train_src) != _count_lines(cfg.data.train_tgt):
        problems.append("data.train_src and data.train_tgt differ in line count")
    n_test = _count_lines(cfg.data.test_src)
    if _count_lines(cfg.data.test_ref) != n_test:
        problems.append("data.test_src and data.test_ref differ in line count")
    test_words = read_lines(cfg.data.test_src)
    refs = read_lines(cfg.data.test_ref)
    readers = {"pos": ann.read_pos, "alignment": ann.read_alignment, "depth": ann.read_depth,
               "train_pos": ann.read_pos}
    for name, reader in readers.items():
        p = getattr(cfg.annotations, name)
        if not p:
            continue
        try:
            rows = reader(p)
        except ann.AnnotationError as exc:
            problems.append(str(exc))
            continue
        if name == "train_pos":
            if len(rows) != _count_lines(cfg.data.train_src):
                problems.append(f"{p}: {len(rows)} lines, training corpus has {_count_lines(cfg.data.train_src)}")
            continue
        if len(rows) != n_test:
            problems.append(f"{p}: {len(rows)} lines, test set has {n_test}")
            continue
        for i, (row, words) in enumerate(zip(rows, test_words), start=1):
            if name == "alignment":
                bad = [f"{s}-{t}" for s, t in row if s >= len(words) or t >= len(refs[i - 1])]
                if bad:
                    problems.append(f"{p}:{i}: links out of range: {' '.join(bad)}")
                continue
            size = len(row[0]) if name == "pos" else len(row)
            if size != len(words):
                problems.append(f"{p}:{i}: {size} items for a {len(words)}-word sentence")
    if cfg.annotations.undertranslation:
        try:
            gold = ann.read_undertranslation(cfg.annotations.undertranslation)
            for sid, positions in gold.items():
                if sid >= n_test or any(w >= len(test_words[sid]) for w in positions):
                    problems.append(f"{cfg.annotations.undertranslation}: sentence {sid} positions out of range")
        except ann.AnnotationError as exc:
            problems.append(str(exc))
    return problems


# ------------------------------------------------------------------- analysis


def run_analysis(scores: dict[Method, list[np.ndarray]], test_words: list[list[str]], refs: list[list[str]],
                 paths: AnnotationPaths, section: AnalysisSection, out: Path, skip) -> dict[str, Any]:
    """Write every analysis whose annotation is present; ``skip(section, reason)`` records the rest."""
    report: dict[str, Any] = {}
    attribution_iv = scores.get(Method.ATTRIBUTION)
    if attribution_iv is None:
        for name in ("pos_distribution", "fertility_distribution", "tree_correlation"):
            skip(f"analysis:{name}", "no Attribution importance")
    pos = None
    if paths.pos:
        pos = [[t.value for t in tags] for _, tags in ann.read_pos(paths.pos)]
    fert = None
    if paths.alignment:
        aligns = ann.read_alignment(paths.alignment)
        fert = [ann.fertility_from_alignment(a, len(w), len(r))[1] for a, w, r in zip(aligns, test_words, refs)]

    if attribution_iv is not None:
        if pos is not None:
            rows = pos_distribution(attribution_iv, pos)
            write_distribution(rows, out / "pos_distribution.csv")
            report["pos_distribution"] = [dataclasses.asdict(r) for r in rows]
        else:
            skip("analysis:pos_distribution", "no POS annotation (annotations.pos)")
        if fert is not None:
            rows = fertility_distribution(attribution_iv, fert)
            write_distribution(rows, out / "fertility_distribution.csv", ("fertility", "count", "attri", "delta"))
            report["fertility_distribution"] = [dataclasses.asdict(r) for r in rows]
        else:
            skip("analysis:fertility_distribution", "no alignment annotation (annotations.alignment)")

    if paths.undertranslation:
        gold = ann.read_undertranslation(paths.undertranslation)
        f1 = {}
        for name in section.f1_methods:
            m = Method.parse(name)
            if m not in scores:
                skip(f"analysis:undertranslation_f1:{m.value}", "estimator not evaluated")
                continue
            f1[m.value] = [detect_undertranslation(scores[m], gold, t) for t in section.thresholds]
        write_f1_report(f1, out / "undertranslation_f1.csv")
        report["undertranslation_f1"] = {k: [dataclasses.asdict(s) for s in v] for k, v in f1.items()}
    else:
        skip("analysis:undertranslation_f1", "no under-translation gold (annotations.undertranslation)")

    if attribution_iv is not None and paths.depth:
        depths = ann.read_depth(paths.depth)
        n_tok = sum(map(len, depths))
        flat_pos = [ann.POS(t) for s in pos for t in s] if pos else [None] * n_tok
        flat_fert = [f for s in fert for f in s] if fert else [None] * n_tok
        X, names, groups = token_features(flat_pos, flat_fert, [d for s in depths for d in s])
        y = np.concatenate([length_normalize(v) for v in attribution_iv])
        try:
            tcorr = tree_correlation(X, y, names, TreeConfig(section.tree_max_depth, section.tree_min_leaf), groups)
            write_tree_report(tcorr, out / "tree_correlation.csv")
            report["tree_correlation"] = dataclasses.asdict(tcorr)
        except ValueError as exc:
            skip("analysis:tree_correlation", str(exc))
    elif attribution_iv is not None:
        skip("analysis:tree_correlation", "no depth annotation (annotations.depth)")
    return report


# -------------------------------------------------------------------- running


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class PipelineResult:
    status: int
    out_dir: Path
    manifest: dict


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    out = Path(cfg.out_dir or os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    skipped: dict[str, str] = {}

    def skip(section: str, reason: str):
        log.warning("skipping %s: %s", section, reason)
        skipped[section] = reason

    # data and model
    train_pairs_words = list(zip(read_lines(cfg.data.train_src), read_lines(cfg.data.train_tgt)))
    splitter = SubwordSplitter.fit([s for s, _ in train_pairs_words], cfg.model.subword_min_count)
    split_src = [splitter.split(s)[0] for s, _ in train_pairs_words]
    vocab = Vocab.build(split_src + [t for _, t in train_pairs_words])
    corpus = [make_pair(s, t, vocab, splitter) for s, t in train_pairs_words]
    tc = TrainConfig(steps=cfg.model.steps, batch_size=cfg.model.batch_size, lr=cfg.model.lr,
                     clip_norm=cfg.model.clip_norm, embed_dim=cfg.model.embed_dim,
                     hidden_dim=cfg.model.hidden_dim, optimizer=cfg.model.optimizer,
                     seed=subseed(cfg.seed, "train") % 2**31)
    log.info("training on %d pairs, vocab %d", len(corpus), len(vocab))
    model = train(corpus, tc, vocab, splitter)
    save_checkpoint(model, out / "model.npz")

    # translate the test set
    test_words = read_lines(cfg.data.test_src)
    refs = read_lines(cfg.data.test_ref)
    pos_rows = ann.read_pos(cfg.annotations.pos) if cfg.annotations.pos else None
    pos = [[t.value for t in tags] for _, tags in pos_rows] if pos_rows else None
    base_pairs = [make_pair(w, [], vocab, splitter) for w in test_words]
    max_len = cfg.evaluation.max_len or 2 * max(p.M for p in base_pairs) + 10
    if cfg.evaluation.beam == 1:
        raw_hyps = greedy_batch(model, [model.embed(p.source) for p in base_pairs], max_len)
    else:
        raw_hyps = [decode(model, p.source, cfg.evaluation.beam, max_len) for p in base_pairs]
    items = [TestItem(p.with_target(strip_hypothesis(h)), r, pos[i] if pos else None)
             for i, (p, h, r) in enumerate(zip(base_pairs, raw_hyps, refs))]
    hyp_words = [vocab.decode(h) for h in raw_hyps]
    with open(out / "hypotheses.txt", "w", encoding="utf-8") as fh:
        fh.writelines(" ".join(h) + "\n" for h in hyp_words)
    test_bleu = 100.0 * bleu(hyp_words, refs)

    # attribution
    contrib_dir = out / "contributions"
    contrib_dir.mkdir(exist_ok=True)

    def attribute(i: int):
        cm = integrated_gradients(model, items[i].pair, cfg.attribution_steps)
        return cm, merge_to_words(word_importance(cm), items[i].pair.subword_spans)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(attribute, range(len(items))))
    attribution_iv = []
    for i, (cm, iv) in enumerate(results):
        cm.to_csv(contrib_dir / f"sentence_{i:04d}.csv")
        attribution_iv.append(iv.values)

    methods = [Method.parse(m) for m in cfg.evaluation.estimators]
    if Method.CONTENT in methods and pos is None:
        skip("estimator:Content", "no POS annotation (annotations.pos)")
        methods.remove(Method.CONTENT)
    rankings: dict[Method, list[list[int]]] = {
        Method.ATTRIBUTION: [list(np.lexsort((np.arange(len(v)), -v))) for v in attribution_iv]}
    scores: dict[Method, list[np.ndarray]] = {Method.ATTRIBUTION: attribution_iv}
    records = []
    for i, it in enumerate(items):
        rec = {"id": i, "source": test_words[i], "hypothesis": hyp_words[i], "estimates": {}}
        for m in methods:
            if m is Method.ATTRIBUTION:
                est_scores, ranking, seed = attribution_iv[i], rankings[m][i], None
            else:
                seed = subseed(cfg.seed, "sentence", i) if m.stochastic else None
                est = estimate(m, model, it.pair, seed=seed or 0, pos=it.pos, reference=it.reference,
                               steps=cfg.attribution_steps, beam=cfg.evaluation.beam)
                est_scores, ranking = est.scores, est.ranking
                if not m.stochastic:
                    rankings.setdefault(m, []).append(ranking)
                    scores.setdefault(m, []).append(est_scores)
            rec["estimates"][m.value] = {
                "scores": [None if not np.isfinite(s) else float(s) for s in est_scores],
                "ranking": [int(r) for r in ranking], "seed": seed}
        records.append(rec)
    _dump_json(records, out / "importance.json")

    # perturbation curves
    curves = []
    pool_words = None
    if cfg.annotations.train_pos:
        train_pos = ann.read_pos(cfg.annotations.train_pos)
        pool_words = ReplacementPool.from_tagged([w for w, _ in train_pos], [[t.value for t in ts] for _, ts in train_pos])
    elif pos_rows:
        pool_words = ReplacementPool.from_tagged(test_words, pos)
    for kind_name in cfg.evaluation.perturbations:
        kind = Perturbation.parse(kind_name)
        if kind is Perturbation.REPLACE and pos is None:
            skip("perturbation:replace", "no POS annotation (annotations.pos)")
            continue
        for m in methods:
            spec = PerturbationSpec(kind, m, cfg.evaluation.k_max,
                                    cfg.evaluation.repeats if (m.stochastic or kind is Perturbation.REPLACE) else 1,
                                    subseed(cfg.seed, "curve", list(Perturbation).index(kind), list(Method).index(m)),
                                    cfg.attribution_steps, cfg.evaluation.beam)
            curves.append(run_curve(model, items, spec, rankings.get(m), pool_words, max_len))
    write_curves(curves, out / "curves.csv")

    # analysis
    analysis_json: dict[str, Any] = {"test_bleu": test_bleu}
    analysis_json.update(run_analysis(scores, test_words, refs, cfg.annotations, cfg.analysis, out, skip))
    _dump_json(analysis_json, out / "report.json")

    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict() | {"out_dir": None, "jobs": None},
        "skipped": skipped,
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in outputs},
    }
    _dump_json(manifest, out / "manifest.json")
    return PipelineResult(0, out, manifest)
