"""Linguistic characterization of word importance.

Distribution tables compare each category's share of tokens ("count") with its
share of length-normalized importance mass ("attr"). Under-translation
detection flags the least important words per sentence. A regression tree
measures how much POS, fertility and syntactic depth explain importance.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import POS, Fertility
from .tree import RegressionTree

log = logging.getLogger(__name__)

POS_ORDER = (POS.NOUN, POS.VERB, POS.ADJ, POS.PREP, POS.DETE, POS.PUNC, POS.OTHERS)
CONTENT = (POS.NOUN, POS.VERB, POS.ADJ)
FERTILITY_ORDER = (Fertility.GE2, Fertility.ONE, Fertility.FRAC, Fertility.ZERO)
DEPTH_BUCKETS = ("Low", "Middle", "High")


def relative_change(count_share: float, attr_share: float) -> float | None:
    """(attr - count) / count, or None when the count share is zero."""
    if count_share == 0:
        return None
    return (attr_share - count_share) / count_share


@dataclass
class DistributionRow:
    label: str
    count_share: float | None
    attr_share: float | None
    delta: float | None
    is_total: bool = False

    @classmethod
    def build(cls, label: str, count_share, attr_share, is_total: bool = False) -> "DistributionRow":
        if count_share is None:
            return cls(label, None, None, None, is_total)
        return cls(label, count_share, attr_share, relative_change(count_share, attr_share), is_total)

    @property
    def omitted(self) -> bool:
        return self.count_share is None

    def cells(self) -> list[str]:
        if self.omitted:
            return [self.label, "-", "-", "-"]
        delta = "-" if self.delta is None else f"{100 * self.delta:+.2f}%"
        return [self.label, f"{self.count_share:.3f}", f"{self.attr_share:.3f}", delta]


def length_normalize(values, M: int | None = None) -> np.ndarray:
    """Importance times sentence length, so the mean entry is 1 for a normalized vector."""
    v = np.asarray(getattr(values, "values", values), dtype=np.float64)
    return v * (len(v) if M is None else M)


def _shares(categories: Sequence, weights: Sequence[float], order):
    cats = list(categories)
    w = np.asarray(weights, dtype=np.float64)
    if len(cats) != len(w):
        raise ValueError("one category per token required")
    total_n, total_w = len(cats), float(w.sum())
    out = {}
    for c in order:
        sel = np.array([x == c for x in cats], dtype=bool)
        if not sel.any():
            out[c] = (None, None)
            continue
        out[c] = (sel.sum() / total_n, float(w[sel].sum()) / total_w if total_w else 0.0)
    return out


def _flatten(importances, annotations, drop=()):
    cats, weights = [], []
    for sid, (imp, ann) in enumerate(zip(importances, annotations)):
        imp = length_normalize(imp)
        if len(imp) != len(ann):
            raise ValueError(f"sentence {sid}: {len(imp)} importances but {len(ann)} annotations")
        for pos, (w, a) in enumerate(zip(imp, ann)):
            if a is None:
                raise ValueError(f"sentence {sid} word {pos} is unannotated")
            if a in drop:
                continue
            cats.append(a)
            weights.append(w)
    return cats, weights


def pos_distribution(importances: Sequence[Sequence[float]], pos_tags: Sequence[Sequence[POS]]) -> list[DistributionRow]:
    """POS table: content rows, content total, content-free rows, content-free total.

    Categories absent from the corpus come back as omitted rows (rendered "-").
    Words tagged ``None`` are left out of both shares.
    """
    cats, weights = _flatten(importances, [[POS.normalize(t) if isinstance(t, str) else t for t in s]
                                           for s in pos_tags], drop=(POS.NONE,))
    shares = _shares(cats, weights, POS_ORDER)
    rows = []
    for group, label in ((CONTENT, "Content Total"), (POS_ORDER[3:], "Content-Free Total")):
        present = [shares[c] for c in group if shares[c][0] is not None]
        rows += [DistributionRow.build(c.value, *shares[c]) for c in group]
        if present:
            rows.append(DistributionRow.build(label, sum(p[0] for p in present), sum(p[1] for p in present), True))
        else:
            rows.append(DistributionRow.build(label, None, None, True))
    return rows


def fertility_distribution(importances, fertility: Sequence[Sequence[Fertility]]) -> list[DistributionRow]:
    if any(f is None for s in fertility for f in s):
        raise ValueError("missing alignment for some tokens")
    cats, weights = _flatten(importances, fertility)
    shares = _shares(cats, weights, FERTILITY_ORDER)
    return [DistributionRow.build(c.value, *shares[c]) for c in FERTILITY_ORDER if shares[c][0] is not None]


def write_distribution(rows: Sequence[DistributionRow], path: str | Path, header=("category", "count", "attri", "delta")):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r.cells())


# ---------------------------------------------------------- under-translation


def least_important(importance: Sequence[float], threshold_pct: float) -> list[int]:
    """Bottom ``threshold_pct`` percent of words, at least one, ceiling rounding, ties to lower index."""
    v = np.asarray(importance, dtype=np.float64)
    # round before ceil so 15% of 20 words is 3, not 4
    count = max(1, math.ceil(round(len(v) * threshold_pct / 100.0, 9)))
    order = np.lexsort((np.arange(len(v)), v))
    return sorted(order[:count].tolist())


@dataclass
class DetectionScore:
    threshold_pct: float
    precision: float
    recall: float
    f1: float
    predicted: int
    gold: int


def detect_undertranslation(importances: Sequence[Sequence[float]], gold: Sequence[set[int]] | dict[int, set[int]],
                            threshold_pct: float) -> DetectionScore:
    """Corpus F1 of least-important words against gold under-translated words."""
    if gold is None:
        raise ValueError("under-translation gold annotations are required")
    if isinstance(gold, dict):
        gold = [gold.get(i, set()) for i in range(len(importances))]
    tp = n_pred = n_gold = 0
    for imp, g in zip(importances, gold):
        pred = set(least_important(length_normalize(imp), threshold_pct))
        tp += len(pred & set(g))
        n_pred += len(pred)
        n_gold += len(g)
    if n_gold == 0:
        log.warning("no gold under-translated words in the corpus; F1 is 0")
        return DetectionScore(threshold_pct, 0.0, 0.0, 0.0, n_pred, 0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold
    f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
    return DetectionScore(threshold_pct, precision, recall, f1, n_pred, n_gold)


# ------------------------------------------------------------- tree analysis


@dataclass
class TreeConfig:
    max_depth: int = 6
    min_leaf: int = 20


@dataclass
class TreeCorrelation:
    features: list[str]
    importances: dict[str, float]
    variance_reduction: dict[str, float]
    constant_target: bool = False
    groups: dict[str, list[str]] = field(default_factory=dict)

    def group_share(self, group: str) -> float:
        return sum(self.importances[f] for f in self.groups.get(group, []))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def depth_terciles(depths: Sequence[int]) -> tuple[float, float]:
    d = np.asarray([x for x in depths if x is not None], dtype=np.float64)
    if len(d) == 0:
        return (0.0, 0.0)
    return float(np.quantile(d, 1 / 3)), float(np.quantile(d, 2 / 3))


def depth_bucket(depth: int | None, cuts: tuple[float, float]) -> str | None:
    if depth is None:
        return None
    if depth <= cuts[0]:
        return "Low"
    return "Middle" if depth <= cuts[1] else "High"


def token_features(pos: Sequence[POS | None], fertility: Sequence[Fertility | None],
                   depth: Sequence[int | None]) -> tuple[np.ndarray, list[str], dict[str, list[str]]]:
    """One-hot POS, fertility class and depth-tercile columns for a flat token list."""
    cuts = depth_terciles(depth)
    names = ([f"POS:{p.value}" for p in POS_ORDER] + [f"Fertility:{f.value}" for f in FERTILITY_ORDER]
             + [f"Syntactic:{b}" for b in DEPTH_BUCKETS])
    groups = {"POS": names[:7], "Fertility": names[7:11], "Syntactic": names[11:]}
    X = np.zeros((len(pos), len(names)))
    for i, (p, f, d) in enumerate(zip(pos, fertility, depth)):
        if p is not None and p in POS_ORDER:
            X[i, POS_ORDER.index(p)] = 1
        if f is not None:
            X[i, 7 + FERTILITY_ORDER.index(f)] = 1
        b = depth_bucket(d, cuts)
        if b is not None:
            X[i, 11 + DEPTH_BUCKETS.index(b)] = 1
    return X, names, groups


def tree_correlation(X, target, feature_names: Sequence[str] | None = None, config: TreeConfig | None = None,
                     groups: dict[str, list[str]] | None = None, min_tokens: int = 100) -> TreeCorrelation:
    """Fit a regression tree of importance on the features; report each feature's share of variance reduction."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if len(y) < min_tokens:
        raise ValueError(f"need at least {min_tokens} annotated tokens, got {len(y)}")
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    config = config or TreeConfig()
    if np.all(y == y[0]):
        log.warning("constant importance target; tree correlation is all zeros")
        zeros = {n: 0.0 for n in names}
        return TreeCorrelation(names, zeros, dict(zeros), True, groups or {})
    tree = RegressionTree(config.max_depth, config.min_leaf).fit(X, y)
    imp = tree.feature_importances
    return TreeCorrelation(names, {n: float(v) for n, v in zip(names, imp)},
                           {n: float(v) for n, v in zip(names, tree.variance_reduction)}, False, groups or {})


def write_tree_report(tc: TreeCorrelation, path: str | Path) -> None:
    group_of = {f: g for g, fs in tc.groups.items() for f in fs}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "feature", "importance", "variance_reduction"])
        for f in tc.features:
            w.writerow([group_of.get(f, ""), f.split(":", 1)[-1], f"{tc.importances[f]:.6f}",
                        f"{tc.variance_reduction[f]:.9g}"])


def write_f1_report(scores: dict[str, Sequence[DetectionScore]], path: str | Path) -> None:
    thresholds = sorted({s.threshold_pct for v in scores.values() for s in v})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [f"top_{t:g}%" for t in thresholds])
        for method, vals in scores.items():
            by_t = {s.threshold_pct: s.f1 for s in vals}
            w.writerow([method] + [f"{by_t[t]:.3f}" for t in thresholds])
