"""Small synthetic corpora with known structure, for demos and behavioral tests."""

from __future__ import annotations

import numpy as np

from .data import PLACEHOLDER_CLASSES, SentencePair


def monotone_corpus(n: int = 500, vocab: int = 30, min_len: int = 5, max_len: int = 12,
                    seed: int = 1, src_prefix: str = "s", tgt_prefix: str = "t"):
    """Word-for-word translations under a fixed random bijection.

    Returns ``(pairs, links)`` where ``links[k]`` is the identity alignment
    as ``(source, target)`` index pairs.
    """
    rng = np.random.default_rng(seed)
    mapping = rng.permutation(vocab)
    pairs, links = [], []
    for k in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        words = rng.integers(0, vocab, size=length)
        src = [f"{src_prefix}{w}" for w in words]
        tgt = [f"{tgt_prefix}{mapping[w]}" for w in words]
        pairs.append(SentencePair(src, tgt, k))
        links.append([(i, i) for i in range(length)])
    return pairs, links


def topic_corpus(n: int = 1000, vocab: int = 12, min_len: int = 3, max_len: int = 6, seed: int = 1):
    """Sentences containing the ambiguous word ``x``.

    ``x`` translates to ``y1`` under topic 0 and ``y2`` under topic 1; every
    other word has a single translation.  Topics alternate, so the corpus is
    balanced.  Returns ``(pairs, topics, links)`` with integer topic labels.
    """
    rng = np.random.default_rng(seed)
    pairs, topics, links = [], [], []
    for k in range(n):
        topic = k % 2
        length = int(rng.integers(min_len, max_len + 1))
        words = [f"w{w}" for w in rng.integers(0, vocab, size=length - 1)]
        words.insert(int(rng.integers(0, length)), "x")
        tgt = [("y1" if topic == 0 else "y2") if w == "x" else "v" + w[1:] for w in words]
        pairs.append(SentencePair(words, tgt, k))
        topics.append(topic)
        links.append([(i, i) for i in range(length)])
    return pairs, topics, links


def two_domain_corpora(n_a: int = 600, n_b: int = 150, shared: int = 16, own: int = 10,
                       min_len: int = 4, max_len: int = 9, seed: int = 1):
    """Two monotone corpora sharing a core lexicon, each with its own domain words.

    Domain words appear with probability 0.3 per position.  Returns
    ``(pairs_a, pairs_b)``.
    """
    rng = np.random.default_rng(seed)

    def corpus(n, domain):
        out = []
        for k in range(n):
            length = int(rng.integers(min_len, max_len + 1))
            src, tgt = [], []
            for _ in range(length):
                if rng.random() < 0.3:
                    w = int(rng.integers(0, own))
                    src.append(f"{domain}{w}")
                    tgt.append(f"{domain.upper()}{w}")
                else:
                    w = int(rng.integers(0, shared))
                    src.append(f"c{w}")
                    tgt.append(f"C{(w * 7 + 3) % shared}")
            out.append(SentencePair(src, [t.lower() for t in tgt], k))
        return out

    return corpus(n_a, "a"), corpus(n_b, "b")


def placeholder_sentences(n: int = 100, min_ph: int = 1, max_ph: int = 3, seed: int = 1):
    """Token lists mixing plain words and placeholder class tokens.

    Returns ``(sentences, entries)`` where ``entries[k]`` lists the
    ``(class, occurrence, text)`` records a preprocessor would have written.
    """
    rng = np.random.default_rng(seed)
    sents, entries = [], []
    for _ in range(n):
        count = int(rng.integers(min_ph, max_ph + 1))
        words = [f"w{int(w)}" for w in rng.integers(0, 20, size=int(rng.integers(2, 8)))]
        for _ in range(count):
            words.insert(int(rng.integers(0, len(words) + 1)), PLACEHOLDER_CLASSES[int(rng.integers(0, 3))])
        seen: dict = {}
        recs = []
        for tok in words:
            if tok in PLACEHOLDER_CLASSES:
                k = seen.get(tok, 0)
                seen[tok] = k + 1
                recs.append((tok, k, f"{tok[1:]}-{len(recs)}-{int(rng.integers(1000))}"))
        sents.append(words)
        entries.append(recs)
    return sents, entries
