"""Case-insensitive corpus BLEU and TER against a single reference."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

MAX_ORDER = 4
MAX_SHIFT_SIZE = 10


@dataclass
class ScoreReport:
    bleu: float = 0.0
    ter: float = 0.0
    precisions: list = field(default_factory=list)
    brevity_penalty: float = 1.0
    hyp_length: int = 0
    ref_length: int = 0
    edits: float = 0.0
    shifts: int = 0

    def summary(self) -> str:
        return f"BLEU = {100 * self.bleu:.2f}  TER = {100 * self.ter:.2f}"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _lower(corpus) -> list:
    return [[tok.lower() for tok in sent] for sent in corpus]


def _check(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise ValueError("empty corpus")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[k:k + n]) for k in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> ScoreReport:
    """Unsmoothed corpus BLEU-4 with clipped n-gram precision and brevity penalty."""
    _check(hypotheses, references)
    hyps, refs = _lower(hypotheses), _lower(references)
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c = r = 0
    for h, ref in zip(hyps, refs):
        c += len(h)
        r += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = _ngrams(h, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    bp = 1.0 if c > r else (math.exp(1.0 - r / c) if c else 0.0)
    score = 0.0
    if min(precisions) > 0:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return ScoreReport(bleu=score, precisions=precisions, brevity_penalty=bp, hyp_length=c, ref_length=r)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Word-level edit distance with unit insertion, deletion and substitution costs."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _shift(words: list, start: int, length: int, dest: int) -> list:
    phrase = words[start:start + length]
    rest = words[:start] + words[start + length:]
    return rest[:dest] + phrase + rest[dest:]


def _candidate_shifts(hyp: list, ref: list):
    """Phrases of ``hyp`` found verbatim in ``ref``, moved to sit at a matching reference offset."""
    ref_starts: dict = {}
    for n in range(1, min(MAX_SHIFT_SIZE, len(ref)) + 1):
        for j in range(len(ref) - n + 1):
            ref_starts.setdefault(tuple(ref[j:j + n]), []).append(j)
    for length in range(1, min(MAX_SHIFT_SIZE, len(hyp)) + 1):
        for start in range(len(hyp) - length + 1):
            phrase = tuple(hyp[start:start + length])
            if phrase not in ref_starts:
                continue
            if tuple(ref[start:start + length]) == phrase:
                continue
            limit = len(hyp) - length
            for j in ref_starts[phrase]:
                dest = min(j, limit)
                if dest != start:
                    yield start, length, dest


def ter_edits(hyp: Sequence[str], ref: Sequence[str]) -> tuple:
    """``(edits, shifts)`` from greedy phrase shifting followed by edit distance.

    Each round applies the shift that lowers the edit distance the most
    (first found on ties); the search stops when no shift helps.
    """
    words = list(hyp)
    ref = list(ref)
    cost = levenshtein(words, ref)
    shifts = 0
    while cost > 0:
        best = None
        for start, length, dest in _candidate_shifts(words, ref):
            moved = _shift(words, start, length, dest)
            d = levenshtein(moved, ref)
            if d < cost and (best is None or d < best[0]):
                best = (d, moved)
        if best is None:
            break
        cost, words = best
        shifts += 1
    return cost + shifts, shifts


def ter(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> ScoreReport:
    """Corpus TER: total edits (shifts included) over total reference length."""
    _check(hypotheses, references)
    hyps, refs = _lower(hypotheses), _lower(references)
    edits = shifts = length = 0
    for n, (h, ref) in enumerate(zip(hyps, refs)):
        if not ref:
            raise ValueError(f"empty reference at line {n + 1}")
        e, s = ter_edits(h, ref)
        edits += e
        shifts += s
        length += len(ref)
    return ScoreReport(ter=edits / length, edits=edits, shifts=shifts, ref_length=length,
                       hyp_length=sum(map(len, hyps)))


def evaluate(hypotheses, references) -> ScoreReport:
    b, t = bleu(hypotheses, references), ter(hypotheses, references)
    b.ter, b.edits, b.shifts = t.ter, t.edits, t.shifts
    return b
