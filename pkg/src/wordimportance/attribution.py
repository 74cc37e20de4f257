"""Integrated-gradients contribution matrices and word importance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import SentencePair, check_spans
from .seqmodel import DTYPE, Seq2SeqBase

DEFAULT_STEPS = 300


@dataclass
class ContributionMatrix:
    """Signed M x N attributions of input word m to output word n."""

    values: np.ndarray
    steps_used: int
    source_tokens: list[str] = field(default_factory=list)
    target_tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("contribution matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("contribution matrix has non-finite entries")
        if self.steps_used < 1:
            raise ValueError("steps_used must be positive")

    @property
    def source_len(self) -> int:
        return self.values.shape[0]

    @property
    def target_len(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        src = self.source_tokens or [str(i) for i in range(self.source_len)]
        tgt = self.target_tokens or [str(j) for j in range(self.target_len)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([""] + list(tgt))
            for tok, row in zip(src, self.values):
                w.writerow([tok] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, steps_used: int = 1) -> "ContributionMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
        return cls(values.reshape(len(rows) - 1, len(rows[0]) - 1), steps_used,
                   [r[0] for r in rows[1:]], rows[0][1:])


@dataclass
class ImportanceVector:
    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)


RULES = ("trapezoid", "sum")


def path_weights(steps: int, rule: str = "trapezoid") -> np.ndarray:
    """Weights of the S + 1 path points k = 0..S, before division by S.

    ``trapezoid`` halves the two endpoints so the sum is exact for gradients
    that are linear along the path; ``sum`` weights every point by one.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; choose from {RULES}")
    w = np.ones(steps + 1)
    if rule == "trapezoid":
        w[0] = w[-1] = 0.5
    return w


def riemann_path_sum(grad_fn: Callable[[np.ndarray], np.ndarray], x, baseline=None, steps: int = DEFAULT_STEPS,
                     rule: str = "trapezoid"):
    """(x - x') / S * sum_{k=0..S} w_k grad(x' + k/S (x - x')), elementwise."""
    w = path_weights(steps, rule)
    x = np.asarray(x, dtype=np.float64)
    base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    diff = x - base
    total = np.zeros_like(x)
    for k in range(steps + 1):
        total = total + w[k] * np.asarray(grad_fn(base + (k / steps) * diff), dtype=np.float64)
    return diff * total / steps


def _path_batch(x: torch.Tensor, baseline: torch.Tensor, steps: int) -> torch.Tensor:
    alphas = torch.arange(steps + 1, dtype=DTYPE) / steps
    return baseline.unsqueeze(0) + alphas.view(-1, 1, 1) * (x - baseline).unsqueeze(0)


def integrated_gradients_embedded(model: Seq2SeqBase, embedded, target: Sequence[int],
                                  steps: int = DEFAULT_STEPS, baseline=None, rule: str = "trapezoid") -> np.ndarray:
    """Contribution values for an already-embedded source; returns an M x N array.

    Each output position costs one backward pass over the batch of S + 1 path points.
    """
    weights = torch.as_tensor(path_weights(steps, rule), dtype=DTYPE).view(-1, 1, 1)
    x = torch.as_tensor(embedded, dtype=DTYPE)
    base = torch.zeros_like(x) if baseline is None else torch.as_tensor(baseline, dtype=DTYPE)
    target = list(target)
    path = _path_batch(x, base, steps).requires_grad_(True)
    scores = model.output_scores(path, target)
    diff = x - base
    out = np.empty((x.shape[0], len(target)))
    for n in range(len(target)):
        g = None
        if scores.requires_grad:
            (g,) = torch.autograd.grad(scores[:, n].sum(), path, retain_graph=n + 1 < len(target),
                                       allow_unused=True)
        if g is None:
            out[:, n] = 0.0
            continue
        finite = torch.isfinite(g).flatten(1).all(1)
        if not bool(finite.all()):
            k = int(torch.nonzero(~finite)[0])
            raise FloatingPointError(f"non-finite gradient at path step k={k}, output position n={n + 1}")
        out[:, n] = ((diff * (weights * g).sum(0)).sum(1) / steps).numpy()
    return out


def integrated_gradients(model: Seq2SeqBase, pair: SentencePair, steps: int = DEFAULT_STEPS,
                         rule: str = "trapezoid") -> ContributionMatrix:
    """IG of every output probability w.r.t. every source embedding, zero-embedding baseline.

    ``pair.target`` should be the model's own hypothesis for ``pair.source``.
    """
    values = integrated_gradients_embedded(model, model.embed(pair.source), pair.target, steps, rule=rule)
    src = tgt = []
    if model.vocab is not None:
        src = [model.vocab.token(i) for i in pair.source]
        tgt = [model.vocab.token(i) for i in pair.target]
    return ContributionMatrix(values, steps, src, tgt)


def word_importance(cm: ContributionMatrix) -> ImportanceVector:
    """Softmax over input positions of each row's summed contributions."""
    sums = cm.values.sum(axis=1)
    e = np.exp(sums - sums.max())
    return ImportanceVector(e / e.sum(), normalized=True)


def merge_to_words(iv: ImportanceVector, spans: Sequence[tuple[int, int]]) -> ImportanceVector:
    """Sum subword importances into their surface words, then renormalize."""
    check_spans(spans, len(iv))
    merged = np.array([iv.values[a:b].sum() for a, b in spans])
    total = merged.sum()
    if total > 0:
        merged = merged / total
    return ImportanceVector(merged, normalized=True)


def completeness_gap(model: Seq2SeqBase, embedded, target: Sequence[int], contributions: np.ndarray,
                     baseline=None) -> np.ndarray:
    """Per output position: sum_m IG[m, n] - (F(x)_n - F(x')_n)."""
    x = torch.as_tensor(embedded, dtype=DTYPE)
    base = torch.zeros_like(x) if baseline is None else torch.as_tensor(baseline, dtype=DTYPE)
    with torch.no_grad():
        f = model.output_scores(torch.stack([x, base]), list(target)).numpy()
    return contributions.sum(axis=0) - (f[0] - f[1])


def convergence_probe(model: Seq2SeqBase, pair: SentencePair, step_schedule: Sequence[int]) -> list[tuple[int, float]]:
    """Worst completeness residual over output positions for each step count."""
    schedule = list(step_schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("step schedule must be strictly increasing")
    emb = model.embed(pair.source)
    out = []
    for s in schedule:
        ig = integrated_gradients_embedded(model, emb, pair.target, s)
        out.append((s, float(np.abs(completeness_gap(model, emb, pair.target, ig)).max())))
    return out
