"""IBM Model 1 word alignment trained with EM.

A small self-contained stand-in for the Viterbi alignments of a full
statistical aligner.  The model estimates lexical translation probabilities
``t(f | e)`` of a target word ``f`` given a source word ``e`` (or the empty
NULL word).  The Viterbi link of each target word is the source position
maximizing ``t(f | e_i)``; the leftmost wins ties and NULL only wins when
strictly better than every real word, in which case no link is emitted.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from .data import format_pharaoh

NULL = None


class IBMModel1:
    def __init__(self):
        self.t: dict = {}
        self.iterations = 0

    def fit(self, corpus: Sequence, iterations: int = 5) -> "IBMModel1":
        """``corpus`` is a sequence of ``(source_tokens, target_tokens)``."""
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        corpus = [(list(s), list(t)) for s, t in corpus]
        if not corpus:
            raise ValueError("empty corpus")
        targets = {f for _, tgt in corpus for f in tgt}
        uniform = 1.0 / max(len(targets), 1)
        t = defaultdict(lambda: uniform)
        for _ in range(iterations):
            count = defaultdict(float)
            total = defaultdict(float)
            for src, tgt in corpus:
                src = [NULL] + src
                for f in tgt:
                    z = sum(t[(f, e)] for e in src)
                    for e in src:
                        c = t[(f, e)] / z
                        count[(f, e)] += c
                        total[e] += c
            t = defaultdict(float)
            for (f, e), c in count.items():
                t[(f, e)] = c / total[e]
            self.iterations += 1
        self.t = dict(t)
        return self

    def prob(self, f, e) -> float:
        return self.t.get((f, e), 0.0)

    def viterbi(self, src: Sequence[str], tgt: Sequence[str]) -> list:
        """Links ``(source_index, target_index)`` for one sentence pair."""
        links = []
        for j, f in enumerate(tgt):
            best_i, best_p = -1, -1.0
            for i, e in enumerate(src):
                p = self.prob(f, e)
                if p > best_p:
                    best_i, best_p = i, p
            if best_i >= 0 and best_p >= self.prob(f, NULL) and best_p > 0.0:
                links.append((best_i, j))
        return links


def ibm1_align(corpus: Sequence, iterations: int = 5) -> list:
    """Train Model 1 on ``corpus`` (pairs or ``SentencePair``s) and return one Pharaoh line per pair."""
    corpus = [(list(p.source), list(p.target)) if hasattr(p, "source") else (list(p[0]), list(p[1]))
              for p in corpus]
    model = IBMModel1().fit(corpus, iterations)
    return [format_pharaoh(model.viterbi(s, t)) for s, t in corpus]
