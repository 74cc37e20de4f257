"""Vocabulary, sentence pairs, subword splitting and parallel-corpus IO."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, PAD, UNK = "<bos>", "<eos>", "<pad>", "<unk>"
RESERVED = (BOS, EOS, PAD, UNK)
BOS_ID, EOS_ID, PAD_ID, UNK_ID = 0, 1, 2, 3

SUBWORD_MARK = "@@"


class Vocab:
    """Dense token <-> index map with training-corpus frequencies.

    The four reserved symbols always occupy indices 0..3.
    """

    def __init__(self, tokens: Sequence[str] = (), frequency: Sequence[int] | None = None):
        self.tokens: list[str] = list(RESERVED)
        self.frequency: list[int] = [0, 0, 0, 0]
        self._index = {t: i for i, t in enumerate(self.tokens)}
        freqs = list(frequency) if frequency is not None else [0] * len(tokens)
        if len(freqs) != len(tokens):
            raise ValueError("tokens and frequency differ in length")
        for tok, count in zip(tokens, freqs):
            if tok in self._index:
                if tok in RESERVED:
                    self.frequency[self._index[tok]] = int(count)
                    continue
                raise ValueError(f"duplicate token {tok!r}")
            self.add(tok, count)

    def add(self, token: str, count: int = 0) -> int:
        if count < 0:
            raise ValueError("frequency must be non-negative")
        if token in self._index:
            self.frequency[self._index[token]] += count
            return self._index[token]
        self._index[token] = len(self.tokens)
        self.tokens.append(token)
        self.frequency.append(int(count))
        return self._index[token]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        """Vocabulary over tokenized sentences, ordered by descending count then token."""
        counts = Counter(tok for sent in sentences for tok in sent)
        ordered = sorted((t for t in counts if t not in RESERVED), key=lambda t: (-counts[t], t))
        return cls(ordered, [counts[t] for t in ordered])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, index: int) -> str:
        return self.tokens[index]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, indices: Iterable[int], strip: bool = True) -> list[str]:
        out = [self.tokens[i] for i in indices]
        if strip:
            out = [t for t in out if t not in (BOS, EOS, PAD)]
        return out

    def most_frequent(self, n: int) -> set[int]:
        """Indices of the ``n`` most frequent non-reserved types (ties broken by index)."""
        order = sorted(range(4, len(self)), key=lambda i: (-self.frequency[i], i))
        return set(order[:n])

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "frequency": self.frequency}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        toks, freqs = d["tokens"], d["frequency"]
        if tuple(toks[:4]) != RESERVED:
            raise ValueError("reserved symbols missing from serialized vocab")
        return cls(toks, freqs)


def identity_spans(m: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(m)]


def check_spans(spans: Sequence[tuple[int, int]], m: int) -> None:
    """Raise ValueError unless ``spans`` are contiguous half-open ranges partitioning 0..m-1."""
    pos = 0
    for start, stop in spans:
        if start != pos or stop <= start:
            raise ValueError(f"spans do not partition 0..{m - 1}: {list(spans)}")
        pos = stop
    if pos != m:
        raise ValueError(f"spans do not partition 0..{m - 1}: {list(spans)}")


@dataclass
class SentencePair:
    """Source/target token indices plus the surface words the source came from.

    ``subword_spans[w]`` is the half-open range of source positions produced by
    surface word ``w``. ``target`` carries no BOS; a trailing EOS is allowed only
    when it is the whole hypothesis.
    """

    source: list[int]
    target: list[int]
    source_surface: list[str] = field(default_factory=list)
    subword_spans: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.source_surface:
            self.source_surface = [str(i) for i in self.source]
        if not self.subword_spans:
            self.subword_spans = identity_spans(len(self.source))
        self.subword_spans = [tuple(s) for s in self.subword_spans]
        check_spans(self.subword_spans, len(self.source))
        if len(self.subword_spans) != len(self.source_surface):
            raise ValueError("one span per surface word required")
        if PAD_ID in self.source or PAD_ID in self.target:
            raise ValueError("PAD inside sequence")

    @property
    def M(self) -> int:
        return len(self.source)

    @property
    def N(self) -> int:
        return len(self.target)

    @property
    def num_words(self) -> int:
        return len(self.source_surface)

    def with_target(self, target: Sequence[int]) -> "SentencePair":
        return SentencePair(list(self.source), list(target), list(self.source_surface), list(self.subword_spans))


def strip_hypothesis(indices: Sequence[int]) -> list[int]:
    """Drop BOS/EOS from a decoded sequence; an empty hypothesis becomes ``[EOS]``."""
    out = [i for i in indices if i not in (BOS_ID, EOS_ID)]
    return out or [EOS_ID]


class SubwordSplitter:
    """Deterministic frequency-threshold splitter standing in for BPE.

    Words seen at least ``min_count`` times in training stay whole; rarer words are
    cut into ``piece_len``-character pieces, every piece but the last tagged with
    ``@@``.
    """

    def __init__(self, counts: Counter | dict | None = None, min_count: int = 1, piece_len: int = 3):
        if piece_len < 1:
            raise ValueError("piece_len must be positive")
        self.counts = Counter(counts or {})
        self.min_count = min_count
        self.piece_len = piece_len

    @classmethod
    def fit(cls, sentences: Iterable[Sequence[str]], min_count: int = 1, piece_len: int = 3):
        return cls(Counter(w for s in sentences for w in s), min_count, piece_len)

    def split_word(self, word: str) -> list[str]:
        if self.counts.get(word, 0) >= self.min_count or len(word) <= self.piece_len:
            return [word]
        pieces = [word[i:i + self.piece_len] for i in range(0, len(word), self.piece_len)]
        return [p + SUBWORD_MARK for p in pieces[:-1]] + [pieces[-1]]

    def split(self, words: Sequence[str]) -> tuple[list[str], list[tuple[int, int]]]:
        tokens: list[str] = []
        spans = []
        for w in words:
            pieces = self.split_word(w)
            spans.append((len(tokens), len(tokens) + len(pieces)))
            tokens.extend(pieces)
        return tokens, spans

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "min_count": self.min_count, "piece_len": self.piece_len}

    @classmethod
    def from_dict(cls, d: dict) -> "SubwordSplitter":
        return cls(d["counts"], d["min_count"], d["piece_len"])


def make_pair(src_words: Sequence[str], tgt_words: Sequence[str], vocab: Vocab,
              splitter: SubwordSplitter | None = None) -> SentencePair:
    if splitter is None:
        tokens, spans = list(src_words), identity_spans(len(src_words))
    else:
        tokens, spans = splitter.split(src_words)
    target = vocab.encode(tgt_words) or [EOS_ID]
    return SentencePair(vocab.encode(tokens), target, list(src_words), spans)


def read_lines(path: str | Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def write_lines(path: str | Path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


def read_parallel(src_path: str | Path, tgt_path: str | Path) -> list[tuple[list[str], list[str]]]:
    src, tgt = read_lines(src_path), read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))
