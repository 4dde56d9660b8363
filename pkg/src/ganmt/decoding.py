"""Beam search, ensembles, placeholder restoration and attention read-outs.

Nothing here takes an alignment matrix: a model trained with guided
alignment decodes from its own attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PLACEHOLDER_CLASSES, UNK, Vocabulary
from .model import DecoderState


@dataclass
class BeamHypothesis:
    tokens: list = field(default_factory=list)
    score: float = 0.0
    attention: list = field(default_factory=list)
    used_slots: frozenset = frozenset()
    finished: bool = False

    @property
    def attention_matrix(self) -> np.ndarray:
        return np.array(self.attention)


def ensemble_step(distributions: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of member distributions."""
    if len(distributions) == 0:
        raise ValueError("no distributions to combine")
    shapes = {np.shape(d) for d in distributions}
    if len(shapes) != 1:
        raise ValueError(f"distribution shapes differ: {sorted(shapes)}")
    if len(distributions) == 1:
        return np.asarray(distributions[0])
    return np.mean(np.stack(distributions), axis=0)


def _reindex(state: DecoderState, idx) -> DecoderState:
    return DecoderState(state.s[idx], state.f[idx])


def default_max_len(n_src: int) -> int:
    return 3 * n_src + 10


def beam_search(models: Sequence, src_ids: Sequence[int], topic=None, beam: int = 10,
                max_len: int | None = None, eos_id: int = Vocabulary.eos_id,
                src_tokens: Sequence[str] | None = None, tgt_vocab: Vocabulary | None = None) -> BeamHypothesis:
    """Best hypothesis by summed log-probability (no length normalization).

    ``models`` share a target vocabulary; per-step distributions are averaged
    and so are their attention rows.  ``src_ids`` ends with the sentence-end
    id.  When ``src_tokens`` and ``tgt_vocab`` are given, each hypothesis
    tracks which source placeholder slots its placeholders have claimed.
    """
    models = list(models)
    if not models:
        raise ValueError("empty ensemble")
    if beam < 1:
        raise ValueError("beam must be >= 1")
    src_ids = list(src_ids)
    if not src_ids:
        raise ValueError("empty source")
    if max_len is None:
        max_len = default_max_len(len(src_ids) - 1)
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if beam > 1:
        # pruning can drop the greedy path; keep it as a floor so a wider
        # beam never scores below beam=1
        wide = _beam(models, src_ids, topic, beam, max_len, eos_id, src_tokens, tgt_vocab)
        narrow = _beam(models, src_ids, topic, 1, max_len, eos_id, src_tokens, tgt_vocab)
        return narrow if narrow.score > wide.score else wide
    return _beam(models, src_ids, topic, beam, max_len, eos_id, src_tokens, tgt_vocab)


def _beam(models, src_ids, topic, beam, max_len, eos_id, src_tokens, tgt_vocab) -> BeamHypothesis:
    track = src_tokens is not None and tgt_vocab is not None
    anns = [m.encode(src_ids) for m in models]
    states = [m.initial_state(a, 1) for m, a in zip(models, anns)]
    alive = [BeamHypothesis()]
    finished: list = []
    capped = False
    for _ in range(max_len):
        y_prev = np.array([h.tokens[-1] if h.tokens else -1 for h in alive])
        dists, atts, new_states = [], [], []
        for m, a, st in zip(models, anns, states):
            d, ns, att = m.decoder_step(y_prev, st, a, topic)
            dists.append(d)
            atts.append(att)
            new_states.append(ns)
        with np.errstate(divide="ignore"):
            logp = np.log(ensemble_step(dists).astype(np.float64))
        att = ensemble_step(atts)
        scores = np.array([h.score for h in alive])[:, None] + logp
        width = beam - len(finished)
        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")[:width]
        vocab = logp.shape[1]
        next_alive, parents = [], []
        for idx in order:
            if not np.isfinite(flat[idx]):
                continue
            k, v = divmod(int(idx), vocab)
            parent = alive[k]
            used = parent.used_slots
            if track and v != eos_id:
                tok = tgt_vocab.itos[v]
                if tok in PLACEHOLDER_CLASSES:
                    slot = assign_slot(tok, att[k], src_tokens, used)
                    if slot is not None:
                        used = used | {slot}
            hyp = BeamHypothesis(parent.tokens + [v], float(flat[idx]), parent.attention + [att[k]], used)
            if v == eos_id:
                hyp.finished = True
                finished.append(hyp)
            else:
                next_alive.append(hyp)
                parents.append(k)
        if not next_alive or len(finished) >= beam:
            break
        alive = next_alive
        states = [_reindex(ns, np.array(parents)) for ns in new_states]
        if finished and max(h.score for h in finished) >= max(h.score for h in alive):
            break
    else:
        capped = True
    # hypotheses cut off by the length limit compete with finished ones
    pool = finished + (alive if capped else []) or alive
    best = max(range(len(pool)), key=lambda k: (pool[k].score, -k))
    return pool[best]


# ---------------------------------------------------------------------------
# attention-driven post-processing


def _slot_positions(src_tokens: Sequence[str]) -> dict:
    """``(class, occurrence) -> source position`` for placeholder tokens."""
    seen: dict = {}
    out = {}
    for pos, tok in enumerate(src_tokens):
        if tok in PLACEHOLDER_CLASSES:
            k = seen.get(tok, 0)
            out[(tok, k)] = pos
            seen[tok] = k + 1
    return out


def assign_slot(cls: str, att_row, src_tokens: Sequence[str], used) -> tuple | None:
    """Source slot for one emitted placeholder.

    The attention argmax wins if it is an unused slot of the same class;
    otherwise the nearest unused same-class slot (ties to the left).
    """
    n = len(src_tokens)
    if n == 0:
        return None
    pos = int(np.argmax(np.asarray(att_row)[:n]))
    free = [(slot, p) for slot, p in _slot_positions(src_tokens).items()
            if slot[0] == cls and slot not in used]
    if not free:
        return None
    for slot, p in free:
        if p == pos:
            return slot
    return min(free, key=lambda sp: (abs(sp[1] - pos), sp[1]))[0]


def restore_placeholders(tokens: Sequence[str], attention, src_tokens: Sequence[str], entries):
    """Replace emitted placeholders with the source text they attend to.

    ``entries`` are the ``(class, occurrence, text)`` records of the source
    line.  Each slot is used at most once; placeholders that find no free slot
    keep their class token.  Returns ``(tokens, used_slots)``.
    """
    texts = {(c, k): t for c, k, t in entries}
    used: set = set()
    out = []
    for t, tok in enumerate(tokens):
        if tok in PLACEHOLDER_CLASSES:
            slot = assign_slot(tok, attention[t], src_tokens, used)
            if slot is not None and slot in texts:
                used.add(slot)
                out.append(texts[slot])
                continue
        out.append(tok)
    return out, used


def copy_oov(tokens: Sequence[str], attention, src_tokens: Sequence[str], unk: str = UNK) -> list:
    """Replace each unknown-word emission with the source token it attends to most."""
    n = len(src_tokens)
    out = list(tokens)
    for t, tok in enumerate(tokens):
        if tok == unk and n:
            out[t] = src_tokens[int(np.argmax(np.asarray(attention[t])[:n]))]
    return out


def hard_alignment(att) -> list:
    """``(t, i)`` with ``i`` the attention argmax of row ``t`` (smallest index on ties)."""
    return [(t, int(np.argmax(row))) for t, row in enumerate(np.asarray(att))]


def topic_distance_matrix(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise cosine distances ``1 - cos(E_j, E_k)``."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("embeddings must share one dimension")
    norms = np.linalg.norm(e, axis=1)
    if (norms == 0).any():
        raise ValueError("zero topic embedding has no direction")
    u = e / norms[:, None]
    d = 1.0 - np.clip(u @ u.T, -1.0, 1.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def format_distance_tsv(d: np.ndarray, labels: Sequence[str]) -> str:
    lines = ["\t" + "\t".join(labels)]
    for lab, row in zip(labels, d):
        lines.append(lab + "\t" + "\t".join(f"{x:.6f}" for x in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sentence-level translation


@dataclass
class Translation:
    tokens: list
    raw_tokens: list
    score: float
    attention: np.ndarray
    alignment: list


def translate(models: Sequence, src_tokens: Sequence[str], src_vocab: Vocabulary, tgt_vocab: Vocabulary,
              topic=None, beam: int = 10, entries=(), max_len: int | None = None) -> Translation:
    """Decode one preprocessed sentence, then restore placeholders and copy OOVs."""
    src_tokens = list(src_tokens)
    hyp = beam_search(models, src_vocab.encode(src_tokens), topic, beam, max_len,
                      src_tokens=src_tokens, tgt_vocab=tgt_vocab)
    ids = hyp.tokens[:-1] if hyp.finished else hyp.tokens
    raw = [tgt_vocab.itos[i] for i in ids]
    att = hyp.attention_matrix[: len(ids)]
    out, _ = restore_placeholders(raw, att, src_tokens, entries)
    out = copy_oov(out, att, src_tokens)
    return Translation(out, raw, hyp.score, att, hard_alignment(att[:, : len(src_tokens)]))
