"""Word-importance estimators behind one interface.

Every estimator scores surface words (subword pieces are merged) and returns a
ranking in descending score order, ties going to the lower index.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .attribution import DEFAULT_STEPS, ImportanceVector, integrated_gradients, merge_to_words, word_importance
from .bleu import sentence_bleu
from .data import SentencePair, Vocab
from .seqmodel import Seq2SeqBase, attention_scores, decode_embedded
from .seeding import substream

CONTENT_TAGS = frozenset({"Noun", "Verb", "Adj"})
FREQUENT_CUTOFF = 50


class Method(str, enum.Enum):
    RANDOM = "Random"
    FREQUENCY = "Frequency"
    CONTENT = "Content"
    ATTENTION = "Attention"
    ERASURE = "Erasure"
    ATTRIBUTION = "Attribution"

    @classmethod
    def parse(cls, name: str) -> "Method":
        for m in cls:
            if m.value.lower() == name.strip().lower():
                return m
        raise ValueError(f"unknown estimator {name!r}; choose from {[m.value for m in cls]}")

    @property
    def stochastic(self) -> bool:
        return self in (Method.RANDOM, Method.CONTENT)


def rank_scores(scores) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores)).tolist()


@dataclass
class ImportanceEstimate:
    method: Method
    scores: np.ndarray
    ranking: list[int]
    stochastic: bool
    tokens: list[str] | None = None
    seed: int | None = None

    @classmethod
    def from_scores(cls, method: Method, scores, tokens=None, seed=None) -> "ImportanceEstimate":
        scores = np.asarray(scores, dtype=np.float64)
        return cls(method, scores, rank_scores(scores), method.stochastic, tokens, seed)

    def top(self, k: int) -> list[int]:
        return self.ranking[:k]

    def to_record(self) -> dict:
        return {
            "method": self.method.value,
            "tokens": self.tokens,
            "scores": [None if not math.isfinite(s) else float(s) for s in self.scores],
            "ranking": list(self.ranking),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _ranked_permutation(method: Method, order: Sequence[int], tokens, seed) -> ImportanceEstimate:
    m = len(order)
    scores = np.empty(m)
    scores[np.asarray(order, dtype=int)] = np.arange(m, 0, -1, dtype=np.float64)
    return ImportanceEstimate(method, scores, list(map(int, order)), True, tokens, seed)


def estimate_random(pair: SentencePair, seed: int) -> ImportanceEstimate:
    order = substream(seed, "random-estimator").permutation(pair.num_words)
    return _ranked_permutation(Method.RANDOM, order, pair.source_surface, seed)


def surface_frequency(pair: SentencePair, vocab: Vocab) -> tuple[np.ndarray, np.ndarray]:
    """Training frequency per surface word and whether it sits in the global top 50."""
    top = vocab.most_frequent(FREQUENT_CUTOFF)
    freq, excluded = [], []
    for a, b in pair.subword_spans:
        pieces = pair.source[a:b]
        freq.append(min(vocab.frequency[i] for i in pieces))
        excluded.append(all(i in top for i in pieces))
    return np.array(freq, dtype=np.float64), np.array(excluded)


def estimate_frequency(pair: SentencePair, vocab: Vocab) -> ImportanceEstimate:
    freq, excluded = surface_frequency(pair, vocab)
    scores = np.where(excluded, -np.inf, freq)
    return ImportanceEstimate.from_scores(Method.FREQUENCY, scores, pair.source_surface)


def estimate_content(pair: SentencePair, pos: Sequence[str] | None, seed: int) -> ImportanceEstimate:
    if pos is None or len(pos) != pair.num_words:
        raise ValueError("content estimator needs one POS tag per surface word")
    rng = substream(seed, "content-estimator")
    content = [i for i, t in enumerate(pos) if t in CONTENT_TAGS]
    rest = [i for i, t in enumerate(pos) if t not in CONTENT_TAGS]
    order = list(rng.permutation(content)) + list(rng.permutation(rest))
    return _ranked_permutation(Method.CONTENT, order, pair.source_surface, seed)


def attention_importance(attn: np.ndarray, spans=None) -> ImportanceVector:
    """Max over output words per input word, softmax over inputs, merged to surface words."""
    best = np.asarray(attn, dtype=np.float64).max(axis=1)
    e = np.exp(best - best.max())
    iv = ImportanceVector(e / e.sum())
    return merge_to_words(iv, spans) if spans is not None else iv


def estimate_attention(model: Seq2SeqBase, pair: SentencePair) -> ImportanceEstimate:
    attn = attention_scores(model, pair.source, pair.target)
    iv = attention_importance(attn, pair.subword_spans)
    return ImportanceEstimate.from_scores(Method.ATTENTION, iv.values, pair.source_surface)


def masked_embedding(model: Seq2SeqBase, pair: SentencePair, words: Sequence[int]) -> torch.Tensor:
    emb = model.embed(pair.source)
    for w in words:
        a, b = pair.subword_spans[w]
        emb[a:b] = 0.0
    return emb


def _hyp_tokens(model: Seq2SeqBase, indices: Sequence[int]) -> list:
    if model.vocab is None:
        return [i for i in indices if i > 1]
    return model.vocab.decode(indices)


def erasure_deltas(model: Seq2SeqBase, pair: SentencePair, reference: Sequence, beam: int = 1,
                   max_len: int | None = None) -> np.ndarray:
    """Sentence-BLEU drop when each surface word alone is masked (M + 1 decodes)."""
    max_len = max_len or 2 * pair.M + 10
    full = _hyp_tokens(model, decode_embedded(model, model.embed(pair.source), beam, max_len))
    base = sentence_bleu(full, reference)
    deltas = []
    for w in range(pair.num_words):
        hyp = decode_embedded(model, masked_embedding(model, pair, [w]), beam, max_len)
        deltas.append(base - sentence_bleu(_hyp_tokens(model, hyp), reference))
    return np.array(deltas)


def normalize_deltas(deltas) -> np.ndarray:
    clipped = np.clip(np.asarray(deltas, dtype=np.float64), 0.0, None)
    total = clipped.sum()
    if total <= 0:
        return np.full(len(clipped), 1.0 / len(clipped))
    return clipped / total


def estimate_erasure(model: Seq2SeqBase, pair: SentencePair, reference: Sequence, beam: int = 1,
                     max_len: int | None = None) -> ImportanceEstimate:
    if reference is None:
        raise ValueError("erasure needs a reference translation")
    scores = normalize_deltas(erasure_deltas(model, pair, reference, beam, max_len))
    return ImportanceEstimate.from_scores(Method.ERASURE, scores, pair.source_surface)


def estimate_attribution(model: Seq2SeqBase, pair: SentencePair, steps: int = DEFAULT_STEPS) -> ImportanceEstimate:
    iv = merge_to_words(word_importance(integrated_gradients(model, pair, steps)), pair.subword_spans)
    return ImportanceEstimate.from_scores(Method.ATTRIBUTION, iv.values, pair.source_surface)


def estimate(method: Method | str, model: Seq2SeqBase, pair: SentencePair, *, seed: int = 0,
             pos: Sequence[str] | None = None, reference: Sequence | None = None,
             steps: int = DEFAULT_STEPS, beam: int = 1) -> ImportanceEstimate:
    """Dispatch to the estimator for ``method``."""
    method = Method.parse(method) if isinstance(method, str) else method
    if method is Method.RANDOM:
        return estimate_random(pair, seed)
    if method is Method.FREQUENCY:
        if model.vocab is None:
            raise ValueError("frequency estimator needs a vocabulary with counts")
        return estimate_frequency(pair, model.vocab)
    if method is Method.CONTENT:
        return estimate_content(pair, pos, seed)
    if method is Method.ATTENTION:
        return estimate_attention(model, pair)
    if method is Method.ERASURE:
        return estimate_erasure(model, pair, reference, beam)
    return estimate_attribution(model, pair, steps)
