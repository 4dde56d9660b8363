import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ganmt.evaluation import bleu, evaluate, levenshtein, ter, ter_edits

words = st.lists(st.sampled_from(["a", "b", "c", "d", "A", "B"]), min_size=1, max_size=12)


def min_shift_edits(hyp, ref):
    """Exhaustive minimum of (shift count + edit distance) over arbitrary phrase shifts."""
    start = tuple(hyp)
    depth = {start: 0}
    queue = deque([start])
    best = levenshtein(start, ref)
    while queue:
        cur = queue.popleft()
        d = depth[cur]
        best = min(best, d + levenshtein(cur, ref))
        if d + 1 >= best:
            continue
        n = len(cur)
        for i in range(n):
            for j in range(i + 1, n + 1):
                rest = cur[:i] + cur[j:]
                for k in range(len(rest) + 1):
                    nxt = rest[:k] + cur[i:j] + rest[k:]
                    if nxt not in depth:
                        depth[nxt] = d + 1
                        queue.append(nxt)
    return best


# ---------------------------------------------------------------------------
# BLEU


def test_bleu_identity():
    h = [["the", "cat", "sat", "on", "the", "mat"]]
    r = bleu(h, h)
    assert r.bleu == pytest.approx(1.0)
    assert r.precisions == [1.0] * 4 and r.brevity_penalty == 1.0


def test_bleu_hand_case():
    r = bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "f"]])
    assert r.precisions == pytest.approx([4 / 5, 3 / 4, 2 / 3, 1 / 2])
    assert r.bleu == pytest.approx(0.2 ** 0.25, abs=1e-12)
    assert r.bleu == pytest.approx(0.6687, abs=1e-4)


def test_bleu_zero_without_fourgram_match():
    r = bleu([["a", "b", "c", "x", "d"]], [["a", "b", "c", "y", "d"]])
    assert r.precisions[3] == 0.0 and r.bleu == 0.0


def test_bleu_brevity_penalty():
    r = bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e", "f", "g", "h"]])
    assert r.brevity_penalty == pytest.approx(math.exp(1 - 8 / 4))
    assert r.bleu == pytest.approx(math.exp(-1))
    # a longer hypothesis pays no penalty
    assert bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d"]]).brevity_penalty == 1.0


def test_bleu_clips_repeated_ngrams():
    r = bleu([["the"] * 7], [["the", "cat", "is", "on", "the", "mat"]])
    assert r.precisions[0] == pytest.approx(2 / 7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_bleu_permutation_and_case_invariant(pairs, rnd):
    hyps, refs = [list(h) for h, _ in pairs], [list(r) for _, r in pairs]
    base = bleu(hyps, refs).bleu
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    assert bleu([hyps[k] for k in order], [refs[k] for k in order]).bleu == pytest.approx(base, abs=1e-12)
    assert bleu([[w.upper() for w in h] for h in hyps], refs).bleu == base
    assert 0.0 <= base <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(words, min_size=1, max_size=5))
def test_self_scores(sents):
    r = evaluate(sents, sents)
    assert r.ter == 0.0
    if all(len(s) >= 4 for s in sents):
        assert r.bleu == pytest.approx(1.0)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [["a"], ["b"]])


# ---------------------------------------------------------------------------
# TER


def test_ter_examples():
    ref = "the quick brown fox jumps over the lazy sleeping dog".split()
    assert ter([ref], [ref]).ter == 0.0
    hyp = list(ref)
    hyp[3] = "cat"
    assert ter([hyp], [ref]).ter == pytest.approx(0.1)
    r = ter([["b", "a"]], [["a", "b"]])
    assert r.ter == 0.5 and r.shifts == 1


def test_ter_moves_a_phrase():
    ref = "we met in paris last year".split()
    hyp = "last year we met in paris".split()
    assert levenshtein(hyp, ref) == 4
    assert ter_edits(hyp, ref) == (1, 1)


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein([], ["a", "b"]) == 2
    assert levenshtein(["a"], []) == 1


def test_ter_errors():
    with pytest.raises(ValueError, match="line 2"):
        ter([["a"], ["b"]], [["a"], []])
    with pytest.raises(ValueError):
        ter([], [])


def test_ter_greedy_never_beats_exhaustive_search():
    rng = np.random.default_rng(0)
    exact = 0
    trials = 150
    for _ in range(trials):
        n, m = rng.integers(1, 9, size=2)
        hyp = list(rng.choice(list("abc"), n))
        ref = list(rng.choice(list("abc"), m))
        edits, _ = ter_edits(hyp, ref)
        best = min_shift_edits(hyp, ref)
        assert best <= edits <= levenshtein(hyp, ref)
        exact += edits == best
    # greedy search is a heuristic, but it should rarely miss
    assert exact >= 0.8 * trials


def test_exhaustive_oracle_examples():
    assert min_shift_edits(["b", "a"], ["a", "b"]) == 1
    assert min_shift_edits(["a"], ["a"]) == 0


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_ter_bounded_by_edit_distance(hyp, ref):
    r = ter([hyp], [ref])
    assert r.ter <= levenshtein([w.lower() for w in hyp], [w.lower() for w in ref]) / len(ref) + 1e-12
    assert r.ter >= 0


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_ter_case_invariant(hyp, ref):
    assert ter([hyp], [ref]).ter == ter([[w.upper() for w in hyp]], [[w.lower() for w in ref]]).ter


def test_summary_format():
    r = evaluate([["a", "b", "c", "d"]], [["a", "b", "c", "d"]])
    assert r.summary() == "BLEU = 100.00  TER = 0.00"
    assert set(r.to_dict()) >= {"bleu", "ter", "precisions", "brevity_penalty"}
