"""Readers for POS, alignment, depth and under-translation annotation files.

Formats, one sentence per line:

* POS: whitespace-separated ``token/TAG``
* alignment: Pharaoh ``i-j`` pairs, 0-indexed source-target
* depth: whitespace-separated non-negative integers
* under-translation gold: ``<sentence id> <word position> ...`` (0-indexed)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path


class AnnotationError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class POS(str, enum.Enum):
    NOUN = "Noun"
    VERB = "Verb"
    ADJ = "Adj"
    PREP = "Prep"
    DETE = "Dete"
    PUNC = "Punc"
    OTHERS = "Others"
    NONE = "None"

    @classmethod
    def normalize(cls, tag: str) -> "POS":
        """Map a tag onto the seven table categories; unknown tags fall into Others."""
        key = tag.strip().rstrip(".").lower()
        for p in cls:
            if p.value.lower() == key:
                return p
        return cls.NONE if key == "none" else cls.OTHERS


class Fertility(str, enum.Enum):
    GE2 = "≥2"
    ONE = "1"
    FRAC = "(0,1)"
    ZERO = "0"


@dataclass
class TokenAnnotation:
    pos: POS | None = None
    fertility_raw: Fraction | None = None
    depth: int | None = None
    under_translated: bool | None = None

    @property
    def fertility_class(self) -> Fertility | None:
        return None if self.fertility_raw is None else classify_fertility(self.fertility_raw)


def classify_fertility(raw) -> Fertility:
    """>=2 one-to-many, exactly 1 one-to-one, (0,1) many-to-one, 0 null-aligned.

    Values strictly between 1 and 2 (a word with one exclusive and one shared
    link) are grouped with one-to-many.
    """
    if raw < 0:
        raise ValueError(f"negative fertility {raw}")
    if raw > 1:
        return Fertility.GE2
    if raw == 1:
        return Fertility.ONE
    if raw > 0:
        return Fertility.FRAC
    return Fertility.ZERO


def fertility_from_alignment(links, M: int, N: int) -> tuple[list[Fraction], list[Fertility]]:
    """Each target word spreads one unit of credit equally over its linked source words."""
    links = set(links)
    for s, t in links:
        if not (0 <= s < M and 0 <= t < N):
            raise ValueError(f"link {s}-{t} outside a {M}x{N} sentence pair")
    sources_of: dict[int, int] = {}
    for _, t in links:
        sources_of[t] = sources_of.get(t, 0) + 1
    raw = [Fraction(0)] * M
    for s, t in links:
        raw[s] += Fraction(1, sources_of[t])
    return raw, [classify_fertility(r) for r in raw]


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def read_pos(path: str | Path) -> list[tuple[list[str], list[POS]]]:
    out = []
    for no, line in enumerate(_lines(path), start=1):
        words, tags = [], []
        for item in line.split():
            word, sep, tag = item.rpartition("/")
            if not sep or not word or not tag:
                raise AnnotationError(path, no, f"expected token/TAG, got {item!r}")
            words.append(word)
            tags.append(POS.normalize(tag))
        out.append((words, tags))
    return out


def parse_alignment_line(line: str) -> list[tuple[int, int]]:
    links = []
    for item in line.split():
        s, sep, t = item.partition("-")
        if not sep or not s.isdigit() or not t.isdigit():
            raise ValueError(f"malformed alignment link {item!r}")
        links.append((int(s), int(t)))
    return links


def read_alignment(path: str | Path) -> list[list[tuple[int, int]]]:
    out = []
    for no, line in enumerate(_lines(path), start=1):
        try:
            out.append(parse_alignment_line(line))
        except ValueError as exc:
            raise AnnotationError(path, no, str(exc)) from None
    return out


def read_depth(path: str | Path) -> list[list[int]]:
    out = []
    for no, line in enumerate(_lines(path), start=1):
        items = line.split()
        if not all(x.isdigit() for x in items):
            raise AnnotationError(path, no, f"depths must be non-negative integers: {line!r}")
        out.append([int(x) for x in items])
    return out


def read_undertranslation(path: str | Path) -> dict[int, set[int]]:
    gold: dict[int, set[int]] = {}
    for no, line in enumerate(_lines(path), start=1):
        items = line.split()
        if not items:
            continue
        if not all(x.isdigit() for x in items):
            raise AnnotationError(path, no, f"expected sentence id and word positions: {line!r}")
        gold.setdefault(int(items[0]), set()).update(int(x) for x in items[1:])
    return gold


def write_pos(path, sentences, tags) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for words, ts in zip(sentences, tags):
            fh.write(" ".join(f"{w}/{t.value if isinstance(t, POS) else t}" for w, t in zip(words, ts)) + "\n")


def write_alignment(path, alignments) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for links in alignments:
            fh.write(" ".join(f"{s}-{t}" for s, t in sorted(links)) + "\n")


def write_depth(path, depths) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in depths:
            fh.write(" ".join(map(str, d)) + "\n")


def write_undertranslation(path, gold: dict[int, set[int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(gold):
            fh.write(" ".join(map(str, [sid, *sorted(gold[sid])])) + "\n")
