"""Perturb the top-k important words, re-decode, and measure corpus BLEU."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .bleu import bleu
from .data import SentencePair, SubwordSplitter, Vocab
from .estimators import ImportanceEstimate, Method, estimate
from .seeding import subseed, substream
from .seqmodel import DTYPE, Seq2SeqBase, decode_embedded, greedy_batch

log = logging.getLogger(__name__)


class Perturbation(str, enum.Enum):
    DELETION = "deletion"
    MASK = "mask"
    REPLACE = "replace"

    @classmethod
    def parse(cls, name: str) -> "Perturbation":
        aliases = {"grammatical_replacement": "replace", "grammaticalreplacement": "replace"}
        key = name.strip().lower()
        return cls(aliases.get(key, key))


@dataclass
class PerturbedSource:
    """Source token indices with a flag per position for zeroed embeddings."""

    tokens: list[int]
    masked: list[bool]

    def embedded(self, model: Seq2SeqBase) -> torch.Tensor:
        if not self.tokens:
            return torch.zeros(0, model.embed_dim, dtype=DTYPE)
        emb = model.embed(self.tokens)
        emb[torch.as_tensor(self.masked, dtype=torch.bool)] = 0.0
        return emb


class ReplacementPool:
    """Surface words of the training data bucketed by POS tag."""

    def __init__(self, buckets: dict[str, list[str]]):
        self.buckets = {tag: sorted(set(words)) for tag, words in buckets.items()}

    @classmethod
    def from_tagged(cls, sentences: Sequence[Sequence[str]], tags: Sequence[Sequence[str]]) -> "ReplacementPool":
        buckets: dict[str, list[str]] = {}
        for words, ts in zip(sentences, tags):
            for w, t in zip(words, ts):
                buckets.setdefault(t, []).append(w)
        return cls(buckets)

    def candidates(self, tag: str, exclude: str) -> list[str]:
        return [w for w in self.buckets.get(tag, []) if w != exclude]


def _word_pieces(word: str, vocab: Vocab, splitter: SubwordSplitter | None) -> list[int]:
    pieces = splitter.split_word(word) if splitter is not None else [word]
    return vocab.encode(pieces)


def perturb(pair: SentencePair, ranking: Sequence[int], k: int, kind: Perturbation | str,
            pos: Sequence[str] | None = None, seed: int = 0, pool: ReplacementPool | None = None,
            vocab: Vocab | None = None, splitter: SubwordSplitter | None = None) -> PerturbedSource:
    """Apply ``kind`` to the ``k`` top-ranked surface words (whole subword spans)."""
    kind = Perturbation.parse(kind) if isinstance(kind, str) else kind
    if sorted(ranking) != list(range(pair.num_words)):
        raise ValueError("ranking is not a permutation of the surface words")
    if k > pair.num_words:
        log.info("k=%d exceeds sentence length %d; clamped", k, pair.num_words)
        k = pair.num_words
    chosen = set(ranking[:k])
    tokens: list[int] = []
    masked: list[bool] = []
    rng = substream(seed, "replacement")
    for w, (a, b) in enumerate(pair.subword_spans):
        piece = pair.source[a:b]
        if w not in chosen:
            tokens += piece
            masked += [False] * len(piece)
        elif kind is Perturbation.DELETION:
            continue
        elif kind is Perturbation.MASK:
            tokens += piece
            masked += [True] * len(piece)
        else:
            if pos is None or pool is None or vocab is None:
                raise ValueError("grammatical replacement needs POS tags, a replacement pool and a vocab")
            cands = pool.candidates(pos[w], pair.source_surface[w])
            if not cands:
                log.warning("empty POS bucket %r for word %r; masking instead", pos[w], pair.source_surface[w])
                tokens += piece
                masked += [True] * len(piece)
                continue
            new = _word_pieces(cands[int(rng.integers(len(cands)))], vocab, splitter)
            tokens += new
            masked += [False] * len(new)
    return PerturbedSource(tokens, masked)


@dataclass
class TestItem:
    """One evaluation sentence: source with the model hypothesis as target, plus the reference."""

    __test__ = False

    pair: SentencePair
    reference: list[str]
    pos: list[str] | None = None


@dataclass
class PerturbationSpec:
    kind: Perturbation
    estimator: Method
    k_max: int = 5
    repeats: int | None = None
    seed: int = 0
    steps: int = 300
    beam: int = 1

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = Perturbation.parse(self.kind)
        if isinstance(self.estimator, str):
            self.estimator = Method.parse(self.estimator)
        if self.repeats is None:
            self.repeats = 10 if self.estimator.stochastic else 1
        if self.repeats < 1 or self.k_max < 0:
            raise ValueError("repeats must be positive and k_max non-negative")


@dataclass
class PerturbationCurve:
    estimator: Method
    kind: Perturbation
    points: list[tuple[int, float, float]] = field(default_factory=list)
    baseline_bleu: float = 0.0
    repeats: int = 1

    def mean(self, k: int) -> float:
        return dict((p[0], p[1]) for p in self.points)[k]

    def rows(self) -> list[dict]:
        return [{"estimator": self.estimator.value, "perturbation": self.kind.value, "k": k,
                 "mean_bleu": m, "std": s, "repeats": self.repeats} for k, m, s in self.points]


CURVE_FIELDS = ["estimator", "perturbation", "k", "mean_bleu", "std", "repeats"]


def write_curves(curves: Sequence[PerturbationCurve], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for c in curves:
            for row in c.rows():
                row = dict(row, mean_bleu=f"{row['mean_bleu']:.12g}", std=f"{row['std']:.12g}")
                w.writerow(row)


def _decode_all(model: Seq2SeqBase, sources: Sequence[PerturbedSource], beam: int, max_len: int):
    embs = [s.embedded(model) for s in sources]
    if beam == 1:
        outs = greedy_batch(model, embs, max_len)
    else:
        outs = [decode_embedded(model, e, beam, max_len) for e in embs]
    if model.vocab is None:
        return [[t for t in o if t > 1] for o in outs]
    return [model.vocab.decode(o) for o in outs]


def testset_rankings(model: Seq2SeqBase, items: Sequence[TestItem], method: Method, seed: int = 0,
                     steps: int = 300, beam: int = 1) -> list[list[int]]:
    return [estimate(method, model, it.pair, seed=subseed(seed, "sentence", i), pos=it.pos,
                     reference=it.reference, steps=steps, beam=beam).ranking
            for i, it in enumerate(items)]


def run_curve(model: Seq2SeqBase, items: Sequence[TestItem], spec: PerturbationSpec,
              rankings: Sequence[Sequence[int]] | None = None, pool: ReplacementPool | None = None,
              max_len: int | None = None,
              ranking_fn: Callable[[int], Sequence[Sequence[int]]] | None = None) -> PerturbationCurve:
    """BLEU after perturbing the top-k words of every test sentence, for k = 0..k_max.

    Deterministic estimators may pass precomputed ``rankings``; stochastic ones are
    re-drawn per repeat from ``(spec.seed, repeat)``.
    """
    if not items:
        raise ValueError("empty test set")
    refs = [it.reference for it in items]
    max_len = max_len or 2 * max(it.pair.M for it in items) + 10
    vocab = model.vocab
    splitter = model.splitter
    per_k: dict[int, list[float]] = {k: [] for k in range(spec.k_max + 1)}
    for r in range(spec.repeats):
        rep_seed = subseed(spec.seed, "repeat", r)
        if spec.estimator.stochastic or rankings is None:
            if ranking_fn is not None:
                ranks = ranking_fn(rep_seed)
            else:
                ranks = testset_rankings(model, items, spec.estimator, rep_seed, spec.steps, spec.beam)
            if not spec.estimator.stochastic:
                rankings = ranks
        else:
            ranks = rankings
        for k in range(spec.k_max + 1):
            sources = []
            for i, (it, rk) in enumerate(zip(items, ranks)):
                try:
                    sources.append(perturb(it.pair, rk, k, spec.kind, it.pos, subseed(rep_seed, "perturb", i, k),
                                           pool, vocab, splitter))
                except Exception as exc:
                    raise RuntimeError(f"perturbation failed on sentence {i}: {exc}") from exc
            hyps = _decode_all(model, sources, spec.beam, max_len)
            per_k[k].append(100.0 * bleu(hyps, refs))
    points = [(k, float(np.mean(v)), float(np.std(v))) for k, v in per_k.items()]
    return PerturbationCurve(spec.estimator, spec.kind, points, points[0][1], spec.repeats)


def relative_decline(curve: PerturbationCurve) -> float:
    """(BLEU at k=0 - BLEU at the largest k) / BLEU at k=0."""
    pts = sorted(curve.points)
    if not pts or pts[0][0] != 0:
        raise ValueError("curve lacks a k=0 point")
    b0, bk = pts[0][1], pts[-1][1]
    if b0 == 0:
        raise ZeroDivisionError("baseline BLEU is zero")
    return (b0 - bk) / b0
