"""Sub-sentence unit extraction for corpus bootstrapping.

Units are long phrase pairs from the usual consistency-based phrase
extraction: no link leaves the block, at least one link lies inside it.
Source length must be in ``[min_len, max_len]`` and, on each side, the span
must both start at the sentence start or on a punctuation token, and end at
the sentence end or on a punctuation token.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .data import PUNCTUATION, SentencePair

MIN_SOURCE_LEN = 8
MAX_SOURCE_LEN = 30


def _links_from(align, t_len: int, s_len: int) -> list:
    if isinstance(align, np.ndarray):
        if align.shape != (t_len, s_len):
            raise ValueError(f"alignment shape {align.shape} does not match pair ({t_len}, {s_len})")
        return [(int(i), int(j)) for j, i in zip(*np.nonzero(align))]
    links = [(int(i), int(j)) for i, j in align]
    for i, j in links:
        if not (0 <= i < s_len and 0 <= j < t_len):
            raise ValueError(f"link {i}-{j} outside pair ({s_len} source, {t_len} target)")
    return links


def bounded(tokens: Sequence[str], start: int, end: int, punctuation=PUNCTUATION) -> bool:
    """Inclusive span ``[start, end]`` opens and closes on a sentence edge or punctuation."""
    opens = start == 0 or tokens[start] in punctuation
    closes = end == len(tokens) - 1 or tokens[end] in punctuation
    return opens and closes


def consistent_blocks(links, s_len: int, t_len: int, min_len: int = 1, max_len: int | None = None):
    """Yield every consistent block ``(s1, s2, t1, t2)`` (inclusive) via phrase extraction."""
    max_len = s_len if max_len is None else max_len
    tgt_of = [[] for _ in range(s_len)]
    src_of = [[] for _ in range(t_len)]
    for i, j in links:
        tgt_of[i].append(j)
        src_of[j].append(i)
    for s1 in range(s_len):
        t_lo, t_hi = t_len, -1
        for s2 in range(s1, min(s_len, s1 + max_len)):
            for j in tgt_of[s2]:
                t_lo, t_hi = min(t_lo, j), max(t_hi, j)
            if t_hi < 0 or s2 - s1 + 1 < min_len:
                continue
            if any(i < s1 or i > s2 for j in range(t_lo, t_hi + 1) for i in src_of[j]):
                continue
            t1 = t_lo
            while True:
                t2 = t_hi
                while True:
                    yield s1, s2, t1, t2
                    t2 += 1
                    if t2 >= t_len or src_of[t2]:
                        break
                t1 -= 1
                if t1 < 0 or src_of[t1]:
                    break


def extract_spans(source, target, align, min_len=MIN_SOURCE_LEN, max_len=MAX_SOURCE_LEN,
                  punctuation=PUNCTUATION) -> list:
    links = _links_from(align, len(target), len(source))
    return sorted(
        (s1, s2, t1, t2)
        for s1, s2, t1, t2 in consistent_blocks(links, len(source), len(target), min_len, max_len)
        if bounded(source, s1, s2, punctuation) and bounded(target, t1, t2, punctuation)
    )


def extract_subsentence_units(pair: SentencePair, align, min_len=MIN_SOURCE_LEN,
                              max_len=MAX_SOURCE_LEN, punctuation=PUNCTUATION) -> list:
    """Sub-sentence pairs of ``pair``.  ``align`` is a target x source matrix or a link list."""
    spans = extract_spans(pair.source, pair.target, align, min_len, max_len, punctuation)
    return [
        SentencePair(list(pair.source[s1:s2 + 1]), list(pair.target[t1:t2 + 1]), pair.line_id)
        for s1, s2, t1, t2 in spans
    ]


def sub_links(links, span) -> list:
    """Links restricted to ``span`` and shifted to the unit's coordinates."""
    s1, s2, t1, t2 = span
    return [(i - s1, j - t1) for i, j in links if s1 <= i <= s2 and t1 <= j <= t2]


def bootstrap_merge(corpus: Iterable, units: Iterable) -> list:
    """Originals first, then the extracted units."""
    return list(corpus) + list(units)
