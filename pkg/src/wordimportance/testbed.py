"""Synthetic parallel corpora with gold linguistic annotations.

Two generators:

* ``copy_corpus`` -- target equals source, tokens drawn uniformly.
* ``toy_language`` -- a small monotone "translation" grammar whose lexicon
  fixes every source word's fertility: some words expand to two target words,
  some are dropped, and preposition+determiner pairs contract into one target
  word. POS tags, Pharaoh alignments and dependency depths come out of the
  generator, so every analysis has exact gold inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POS_TAGS = ("Noun", "Verb", "Adj", "Prep", "Dete", "Punc", "Others")


@dataclass
class Example:
    source: list[str]
    target: list[str]
    pos: list[str] = field(default_factory=list)
    alignment: list[tuple[int, int]] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)


def copy_corpus(n_pairs: int, vocab_size: int = 496, min_len: int = 3, max_len: int = 10,
                seed: int = 0) -> list[Example]:
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    out = []
    for _ in range(n_pairs):
        m = int(rng.integers(min_len, max_len + 1))
        src = [words[i] for i in rng.integers(0, vocab_size, size=m)]
        out.append(Example(src, list(src), alignment=[(i, i) for i in range(m)]))
    return out


@dataclass
class ToyLexicon:
    """Source word -> (POS, list of target words)."""

    entries: dict[str, tuple[str, list[str]]]
    contractions: dict[tuple[str, str], str]

    def by_pos(self, tag: str) -> list[str]:
        return [w for w, (p, _) in self.entries.items() if p == tag]


def build_lexicon(n_noun: int = 60, n_verb: int = 30, n_adj: int = 20, n_prep: int = 6,
                  n_dete: int = 5, n_punc: int = 3, n_other: int = 16, seed: int = 0) -> ToyLexicon:
    rng = np.random.default_rng(seed)
    entries: dict[str, tuple[str, list[str]]] = {}

    def add(tag, prefix, count, two_share=0.0, null_share=0.0):
        words = [f"{prefix}{i}" for i in range(count)]
        kinds = rng.permutation(count)
        n_two, n_null = int(round(two_share * count)), int(round(null_share * count))
        for rank, w in zip(kinds, words):
            tgt = w.upper()
            if rank < n_two:
                entries[w] = (tag, [tgt + "a", tgt + "b"])
            elif rank < n_two + n_null:
                entries[w] = (tag, [])
            else:
                entries[w] = (tag, [tgt])

    add("Noun", "n", n_noun, two_share=0.25)
    add("Verb", "v", n_verb, two_share=0.3)
    add("Adj", "j", n_adj)
    add("Prep", "p", n_prep)
    add("Dete", "d", n_dete, null_share=0.6)
    add("Punc", "q", n_punc)
    add("Others", "o", n_other, null_share=0.5)
    contractions = {}
    for p in (f"p{i}" for i in range(min(3, n_prep))):
        for d in (f"d{i}" for i in range(min(2, n_dete))):
            contractions[(p, d)] = f"{p}{d}".upper()
    return ToyLexicon(entries, contractions)


def _noun_phrase(rng, lex: ToyLexicon, head_depth: int):
    words, tags, depths = [], [], []
    if rng.random() < 0.7:
        words.append(str(rng.choice(lex.by_pos("Dete")))); tags.append("Dete"); depths.append(head_depth + 1)
    if rng.random() < 0.4:
        words.append(str(rng.choice(lex.by_pos("Adj")))); tags.append("Adj"); depths.append(head_depth + 1)
    words.append(str(rng.choice(lex.by_pos("Noun")))); tags.append("Noun"); depths.append(head_depth)
    return words, tags, depths


def sample_sentence(rng, lex: ToyLexicon) -> Example:
    words, tags, depths = _noun_phrase(rng, lex, 1)
    if rng.random() < 0.4:
        words.append(str(rng.choice(lex.by_pos("Others")))); tags.append("Others"); depths.append(1)
    words.append(str(rng.choice(lex.by_pos("Verb")))); tags.append("Verb"); depths.append(0)
    if rng.random() < 0.7:
        w, t, d = _noun_phrase(rng, lex, 1)
        words += w; tags += t; depths += d
    if rng.random() < 0.5:
        words.append(str(rng.choice(lex.by_pos("Prep")))); tags.append("Prep"); depths.append(1)
        w, t, d = _noun_phrase(rng, lex, 2)
        words += w; tags += t; depths += d
    words.append(str(rng.choice(lex.by_pos("Punc")))); tags.append("Punc"); depths.append(1)
    return translate(words, lex, tags, depths)


def translate(words: list[str], lex: ToyLexicon, tags=None, depths=None) -> Example:
    """Deterministic translation of a source sentence with its word alignment."""
    target: list[str] = []
    links: list[tuple[int, int]] = []
    i = 0
    while i < len(words):
        w = words[i]
        if i + 1 < len(words) and (w, words[i + 1]) in lex.contractions:
            links += [(i, len(target)), (i + 1, len(target))]
            target.append(lex.contractions[(w, words[i + 1])])
            i += 2
            continue
        for t in lex.entries[w][1]:
            links.append((i, len(target)))
            target.append(t)
        i += 1
    tags = tags if tags is not None else [lex.entries[w][0] for w in words]
    return Example(list(words), target, list(tags), links, list(depths or []))


def toy_language(n_pairs: int, seed: int = 0, lexicon: ToyLexicon | None = None) -> list[Example]:
    lex = lexicon or build_lexicon(seed=0)
    rng = np.random.default_rng(seed)
    return [sample_sentence(rng, lex) for _ in range(n_pairs)]


def undertranslated_words(example: Example, hypothesis: list[str]) -> list[int]:
    """Source positions whose aligned reference words are all missing from ``hypothesis``."""
    hyp = set(hypothesis)
    linked: dict[int, list[str]] = {}
    for s, t in example.alignment:
        linked.setdefault(s, []).append(example.target[t])
    return sorted(s for s, tw in linked.items() if not any(w in hyp for w in tw))
