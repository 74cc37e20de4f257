"""Corpus BLEU over token streams."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence


def ngram_counts(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Sufficient statistics for BLEU; ``+`` accumulates them over a corpus."""

    matches: list[int] = field(default_factory=lambda: [0] * 4)
    totals: list[int] = field(default_factory=lambda: [0] * 4)
    hyp_len: int = 0
    ref_len: int = 0

    @classmethod
    def from_sentence(cls, hypothesis: Sequence[Hashable], reference: Sequence[Hashable],
                      max_order: int = 4) -> "BleuStats":
        matches, totals = [], []
        for n in range(1, max_order + 1):
            h, r = ngram_counts(hypothesis, n), ngram_counts(reference, n)
            matches.append(sum(min(c, r[g]) for g, c in h.items()))
            totals.append(max(len(hypothesis) - n + 1, 0))
        return cls(matches, totals, len(hypothesis), len(reference))

    def __add__(self, other: "BleuStats") -> "BleuStats":
        if len(self.matches) != len(other.matches):
            raise ValueError("BLEU orders differ")
        return BleuStats([a + b for a, b in zip(self.matches, other.matches)],
                         [a + b for a, b in zip(self.totals, other.totals)],
                         self.hyp_len + other.hyp_len, self.ref_len + other.ref_len)

    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len > self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    def score(self, smooth: bool = False) -> float:
        """Geometric mean of modified precisions times the brevity penalty.

        Unsmoothed, any order without matches gives 0. ``smooth`` adds one to the
        matches and totals of orders 2 and up (sentence-level BLEU+1).
        """
        if self.hyp_len == 0:
            return 0.0
        log_p = 0.0
        for n, (m, t) in enumerate(zip(self.matches, self.totals), start=1):
            if smooth and n > 1:
                m, t = m + 1, t + 1
            if m == 0 or t == 0:
                return 0.0
            log_p += math.log(m / t)
        return self.brevity_penalty() * math.exp(log_p / len(self.matches))


def corpus_stats(hypotheses, references, max_order: int = 4) -> BleuStats:
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("BLEU needs at least one sentence")
    total = BleuStats([0] * max_order, [0] * max_order)
    for h, r in zip(hypotheses, references):
        total = total + BleuStats.from_sentence(list(h), list(r), max_order)
    return total


def bleu(hypotheses, references, max_order: int = 4) -> float:
    """Unsmoothed corpus BLEU in [0, 1] with one reference per hypothesis."""
    return corpus_stats(hypotheses, references, max_order).score()


def sentence_bleu(hypothesis, reference, max_order: int = 4) -> float:
    """Add-one smoothed BLEU for a single sentence."""
    return BleuStats.from_sentence(list(hypothesis), list(reference), max_order).score(smooth=True)
