"""Attention encoder-decoder with a topic-aware readout layer.

Encoder: two stacked bidirectional GRU layers; layer 2 reads the
concatenated layer-1 states and the annotation of position ``i`` is
``[forward_i; backward_i]`` of layer 2.

Decoder step ``t`` (``s`` is the previous decoder state, ``f`` the embedding
of the previous target word, zero at the first step)::

    e_i   = (s W_s) . (h_i W_h)                  dot attention
    alpha = softmax(e)                            over source positions
    c     = sum_i alpha_i h_i
    r     = [c; f; s] W_r + b_r + l W_c^T         l: topic vector (optional)
    p     = softmax(maxout(r) W_o + b_o)
    s'    = GRU([f; c], s)

The initial state is ``tanh(backward_0 W_init + b_init)`` using layer 2's
backward state at the first source position.  Both sides carry a sentence-end
token, and the per-pair decoder cost is normalized by target length.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numeric as nm
from .numeric import ParameterStore, ShapeError, Tape

ALIGN_LOG_FLOOR = 1e-12


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 620
    cell_dim: int = 1000
    topic_dim: int = 0
    use_topic: bool = False
    maxout_pieces: int = 2
    readout_dim: int | None = None

    def __post_init__(self):
        if self.readout_dim is None:
            self.readout_dim = self.embed_dim
        dims = (self.src_vocab_size, self.tgt_vocab_size, self.embed_dim, self.cell_dim,
                self.maxout_pieces, self.readout_dim)
        if min(dims) < 1:
            raise ValueError(f"model dimensions must be positive: {self}")
        if self.use_topic and self.topic_dim < 1:
            raise ValueError("use_topic requires topic_dim >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_params(config: ModelConfig, seed: int = 1, scale: float = 0.08, dtype=np.float32) -> ParameterStore:
    rng = np.random.default_rng(seed)
    e, n = config.embed_dim, config.cell_dim
    out = config.readout_dim * config.maxout_pieces
    p = ParameterStore()
    u = lambda *shape: nm.uniform_init(shape, rng, scale, dtype)  # noqa: E731
    p["src_embed"] = u(config.src_vocab_size, e)
    p["tgt_embed"] = u(config.tgt_vocab_size, e)
    nm.init_gru(p, "enc.l1.fwd", e, n, rng, scale, dtype)
    nm.init_gru(p, "enc.l1.bwd", e, n, rng, scale, dtype)
    nm.init_gru(p, "enc.l2.fwd", 2 * n, n, rng, scale, dtype)
    nm.init_gru(p, "enc.l2.bwd", 2 * n, n, rng, scale, dtype)
    p["init.W"] = u(n, n)
    p["init.b"] = np.zeros(n, dtype=dtype)
    p["att.W_s"] = u(n, n)
    p["att.W_h"] = u(2 * n, n)
    nm.init_gru(p, "dec.gru", e + 2 * n, n, rng, scale, dtype)
    p["readout.W_r"] = u(2 * n + e + n, out)
    p["readout.b_r"] = np.zeros(out, dtype=dtype)
    if config.use_topic:
        p["readout.W_c"] = u(out, config.topic_dim)
    p["out.W"] = u(config.readout_dim, config.tgt_vocab_size)
    p["out.b"] = np.zeros(config.tgt_vocab_size, dtype=dtype)
    return p


@dataclass
class Example:
    """One encoded training pair; ids include the trailing sentence-end."""

    src: Sequence[int]
    tgt: Sequence[int]
    links: Sequence | None = None
    topic: np.ndarray | None = None


@dataclass
class Batch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray
    topics: np.ndarray | None = None
    align: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(examples: Sequence[Example], need_align: bool = False) -> Batch:
    """Pad a list of examples.  Alignment links index the tokens before the sentence-end."""
    from .data import links_to_matrix

    b = len(examples)
    s_max = max(len(ex.src) for ex in examples)
    t_max = max(len(ex.tgt) for ex in examples)
    src = np.zeros((b, s_max), dtype=np.int64)
    tgt = np.zeros((b, t_max), dtype=np.int64)
    src_mask = np.zeros((b, s_max), dtype=bool)
    tgt_mask = np.zeros((b, t_max), dtype=bool)
    for k, ex in enumerate(examples):
        if len(ex.src) == 0 or len(ex.tgt) == 0:
            raise ValueError("empty source or target")
        src[k, : len(ex.src)] = ex.src
        tgt[k, : len(ex.tgt)] = ex.tgt
        src_mask[k, : len(ex.src)] = True
        tgt_mask[k, : len(ex.tgt)] = True
    topics = None
    if examples[0].topic is not None:
        topics = np.stack([np.asarray(ex.topic, dtype=np.float64) for ex in examples])
    align = None
    if need_align:
        align = np.zeros((b, t_max, s_max))
        for k, ex in enumerate(examples):
            if ex.links is None:
                raise ValueError("guided training needs an alignment for every pair")
            t_len, s_len = len(ex.tgt) - 1, len(ex.src) - 1
            if isinstance(ex.links, np.ndarray):
                mat = ex.links
                if mat.shape != (t_len, s_len):
                    raise ShapeError(f"alignment {mat.shape} vs pair ({t_len}, {s_len})")
            else:
                mat = links_to_matrix(ex.links, t_len, s_len)
            align[k, :t_len, :s_len] = mat
    return Batch(src, src_mask, tgt, tgt_mask, topics, align)


@dataclass
class EncoderAnnotations:
    """Annotations of one batch of sources plus the derived decoder inputs."""

    H: nm.Var
    keys: nm.Var
    mask: np.ndarray
    s0: nm.Var

    @property
    def matrix(self) -> np.ndarray:
        """``(T', 2*cell_dim)`` annotations of the first sentence."""
        return self.H.value[0][self.mask[0]]


@dataclass
class DecoderState:
    """``s``: decoder state; ``f``: embedding of the last consumed target word."""

    s: np.ndarray
    f: np.ndarray


class Model:
    def __init__(self, config: ModelConfig, params: ParameterStore):
        self.config = config
        self.params = params

    # -- tape-level building blocks ---------------------------------------

    def _birnn(self, tape: Tape, xs: list, mask: np.ndarray, prefix: str):
        b = mask.shape[0]
        n = self.config.cell_dim
        dtype = tape.dtype
        m = mask.astype(dtype)[:, :, None]
        fwd, bwd = [None] * len(xs), [None] * len(xs)
        h = tape.const(np.zeros((b, n), dtype=dtype))
        for i, x in enumerate(xs):
            new = nm.gru_cell(x, h, tape, prefix + ".fwd")
            h = h + (new - h) * m[:, i]
            fwd[i] = h
        h = tape.const(np.zeros((b, n), dtype=dtype))
        for i in reversed(range(len(xs))):
            new = nm.gru_cell(xs[i], h, tape, prefix + ".bwd")
            h = h + (new - h) * m[:, i]
            bwd[i] = h
        return fwd, bwd

    def encode_batch(self, tape: Tape, src: np.ndarray, src_mask: np.ndarray) -> EncoderAnnotations:
        if src.shape[1] == 0:
            raise ValueError("empty source")
        if src.min() < 0 or src.max() >= self.config.src_vocab_size:
            raise IndexError("source id out of vocabulary range")
        emb = tape.param("src_embed")
        xs = [nm.take(emb, src[:, i]) for i in range(src.shape[1])]
        f1, b1 = self._birnn(tape, xs, src_mask, "enc.l1")
        xs2 = [nm.concat([a, b]) for a, b in zip(f1, b1)]
        f2, b2 = self._birnn(tape, xs2, src_mask, "enc.l2")
        H = nm.stack([nm.concat([a, b]) for a, b in zip(f2, b2)], axis=1)
        keys = nm.matmul(H, tape.param("att.W_h"))
        s0 = nm.tanh(nm.matmul(b2[0], tape.param("init.W")) + tape.param("init.b"))
        return EncoderAnnotations(H, keys, src_mask, s0)

    def _attend(self, tape: Tape, s: nm.Var, ann: EncoderAnnotations):
        q = nm.matmul(s, tape.param("att.W_s"))
        alpha = nm.softmax(nm.bmv(ann.keys, q), mask=ann.mask)
        return alpha, nm.weighted_sum(alpha, ann.H)

    def _preactivation(self, tape: Tape, c, f, s, topics):
        r = nm.matmul(nm.concat([c, f, s]), tape.param("readout.W_r")) + tape.param("readout.b_r")
        if self.config.use_topic:
            if topics is None:
                raise ValueError("model is topic-aware but no topic vector was given")
            topics = np.asarray(topics)
            if topics.shape[-1] != self.config.topic_dim:
                raise ShapeError(f"topic dim {topics.shape[-1]} != {self.config.topic_dim}")
            r = r + nm.matmul(tape.const(topics), _transpose(tape.param("readout.W_c")))
        elif topics is not None:
            raise ValueError("model has no topic input but a topic vector was given")
        return r

    def _logits(self, tape: Tape, r: nm.Var) -> nm.Var:
        m = nm.maxout(r, self.config.maxout_pieces)
        return nm.matmul(m, tape.param("out.W")) + tape.param("out.b")

    def _embed_prev(self, tape: Tape, y_prev: np.ndarray) -> nm.Var:
        y_prev = np.asarray(y_prev, dtype=np.int64)
        if y_prev.max(initial=-1) >= self.config.tgt_vocab_size:
            raise IndexError("target id out of vocabulary range")
        f = nm.take(tape.param("tgt_embed"), np.maximum(y_prev, 0))
        if (y_prev < 0).any():
            f = f * (y_prev >= 0).astype(tape.dtype)[:, None]
        return f

    def teacher_forced(self, tape: Tape, batch: Batch):
        """Per-step log-probabilities ``(B, T)`` and attention ``(B, T, T')`` as Vars."""
        if batch.tgt.shape[1] == 0:
            raise ValueError("empty target")
        if batch.tgt.min() < 0 or batch.tgt.max() >= self.config.tgt_vocab_size:
            raise IndexError("target id out of vocabulary range")
        ann = self.encode_batch(tape, batch.src, batch.src_mask)
        emb = tape.param("tgt_embed")
        s = ann.s0
        f = tape.const(np.zeros((batch.size, self.config.embed_dim), dtype=tape.dtype))
        logps, alphas = [], []
        for t in range(batch.tgt.shape[1]):
            alpha, c = self._attend(tape, s, ann)
            r = self._preactivation(tape, c, f, s, batch.topics)
            logp = nm.log_softmax(self._logits(tape, r))
            logps.append(nm.gather(logp, batch.tgt[:, t]))
            alphas.append(alpha)
            s = nm.gru_cell(nm.concat([f, c]), s, tape, "dec.gru")
            f = nm.take(emb, batch.tgt[:, t])
        return nm.stack(logps, axis=1), nm.stack(alphas, axis=1)

    # -- array-level API ---------------------------------------------------

    def _tape(self) -> Tape:
        return Tape(self.params, record=False)

    def encode(self, src_ids: Sequence[int]) -> EncoderAnnotations:
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.size == 0:
            raise ValueError("empty source")
        return self.encode_batch(self._tape(), src_ids[None, :], np.ones((1, src_ids.size), dtype=bool))

    def initial_state(self, ann: EncoderAnnotations, k: int = 1) -> DecoderState:
        s0 = np.repeat(ann.s0.value[:1], k, axis=0)
        return DecoderState(s0, np.zeros((k, self.config.embed_dim), dtype=s0.dtype))

    def _expand(self, ann: EncoderAnnotations, k: int) -> EncoderAnnotations:
        if ann.H.value.shape[0] == k:
            return ann
        tape = ann.H.tape
        idx = np.zeros(k, dtype=np.int64)
        return EncoderAnnotations(tape.const(ann.H.value[idx]), tape.const(ann.keys.value[idx]),
                                  ann.mask[idx], ann.s0)

    def attention_step(self, s_prev, ann: EncoderAnnotations):
        """Attention weights and context for decoder state(s) ``s_prev``."""
        s_prev = np.atleast_2d(s_prev)
        tape = self._tape()
        ann = self._expand(ann, s_prev.shape[0])
        alpha, c = self._attend(tape, tape.const(s_prev), ann)
        return alpha.value, c.value

    def readout_preactivation(self, ctx, state: DecoderState, topic=None) -> np.ndarray:
        tape = self._tape()
        topics = None if topic is None else np.atleast_2d(topic)
        r = self._preactivation(tape, tape.const(np.atleast_2d(ctx)), tape.const(np.atleast_2d(state.f)),
                                tape.const(np.atleast_2d(state.s)), topics)
        return r.value

    def readout(self, ctx, state: DecoderState, topic=None) -> np.ndarray:
        """Target-word distribution(s) from context, previous embedding/state and topic."""
        tape = self._tape()
        r = tape.const(self.readout_preactivation(ctx, state, topic))
        return nm.softmax(self._logits(tape, r)).value

    def decoder_step(self, y_prev, state: DecoderState, ann: EncoderAnnotations, topic=None):
        """One decoding step for ``K`` parallel hypotheses.

        ``y_prev`` holds the previously emitted ids (``-1`` or ``None`` for the
        sentence start); ``state.s`` is the previous decoder state.  Returns
        ``(distribution (K, V), new state, attention (K, T'))``.
        """
        tape = self._tape()
        s = np.atleast_2d(state.s)
        k = s.shape[0]
        if y_prev is None:
            y_prev = np.full(k, -1)
        y_prev = np.atleast_1d(np.asarray(y_prev, dtype=np.int64))
        f = self._embed_prev(tape, y_prev)
        ann = self._expand(ann, k)
        s_var = tape.const(s)
        alpha, c = self._attend(tape, s_var, ann)
        topics = None
        if topic is not None:
            topics = np.broadcast_to(np.asarray(topic), (k, np.asarray(topic).shape[-1]))
        r = self._preactivation(tape, c, f, s_var, topics)
        dist = nm.softmax(self._logits(tape, r)).value
        s_new = nm.gru_cell(nm.concat([f, c]), s_var, tape, "dec.gru")
        return dist, DecoderState(s_new.value, f.value), alpha.value

    def forward_teacher_forced(self, src_ids, tgt_ids, topic=None):
        """Per-pair decoder cost ``-(1/T) sum_t log p(y_t)`` and the ``T x T'`` attention."""
        if len(tgt_ids) == 0:
            raise ValueError("empty target")
        batch = make_batch([Example(list(src_ids), list(tgt_ids), topic=topic)])
        logp, alpha = self.teacher_forced(self._tape(), batch)
        return float(-logp.value[0].mean()), alpha.value[0]

    def topic_embedding(self, k: int) -> np.ndarray:
        if not self.config.use_topic:
            raise ValueError("model has no topic embeddings")
        if not 0 <= k < self.config.topic_dim:
            raise IndexError(f"topic {k} outside [0, {self.config.topic_dim})")
        return self.params["readout.W_c"][:, k].copy()


def _transpose(x: nm.Var) -> nm.Var:
    return x.tape.emit(x.value.T, (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# batch losses


def decoder_cost(logp: nm.Var, batch: Batch) -> nm.Var:
    """Batch mean of per-pair, length-normalized negative log-likelihood."""
    m = batch.tgt_mask.astype(np.float64)
    w = m / m.sum(axis=1, keepdims=True) / batch.size
    return nm.sum_(logp * (-w.astype(logp.value.dtype)))


def _align_weights(batch: Batch) -> tuple:
    a = batch.align
    live = a.sum(axis=2) > 0
    counts = live.sum(axis=1)
    per_pair = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0) / batch.size
    return a, live, per_pair


def alignment_cost(alpha: nm.Var, batch: Batch, divergence: str = "cross_entropy") -> nm.Var:
    """Batch mean of the per-pair alignment divergence over linked target rows."""
    a, live, per_pair = _align_weights(batch)
    dtype = alpha.value.dtype
    if divergence == "cross_entropy":
        w = (a * per_pair[:, None, None]).astype(dtype)
        return nm.sum_(nm.log(alpha, ALIGN_LOG_FLOOR) * (-w))
    if divergence == "squared_error":
        w = (live * per_pair[:, None])[:, :, None].astype(dtype)
        diff = alpha - a.astype(dtype)
        return nm.sum_(diff * diff * w)
    raise ValueError(f"unknown divergence {divergence!r}")
