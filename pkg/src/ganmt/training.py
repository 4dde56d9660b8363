"""Guided-alignment training: loss assembly, AdaDelta, epoch loop, selection, adaptation.

The training objective for a batch is ``w1 * G + w2 * H_D`` where ``H_D`` is
the mean per-pair decoder cost (negative log-likelihood normalized by
target length) and ``G`` the mean per-pair divergence between attention
weights and the supplied alignment matrix, averaged over the target rows
that carry at least one alignment link.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import model as mdl
from .checkpoint import Checkpoint, OptimizerState
from .data import Vocabulary, parse_pharaoh
from .model import Example, Model, ModelConfig, make_batch
from .numeric import ParameterStore, ShapeError, Tape, backward, uniform_init

DIVERGENCES = ("cross_entropy", "squared_error")


@dataclass
class LossWeights:
    w1: float = 1.0  # alignment cost
    w2: float = 1.0  # decoder cost
    decay_factor: float = 1.0
    divergence: str = "cross_entropy"

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or (self.w1 == 0 and self.w2 == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"divergence must be one of {DIVERGENCES}")


# Fixed ratio presets, read as w1:w2.
RATIO_PRESETS = {"1:2": (0.5, 1.0), "1:1": (1.0, 1.0), "2:1": (2.0, 1.0)}


@dataclass
class TrainConfig:
    batch_size: int = 100
    max_epochs: int = 10
    checkpoint_every: int | None = None
    seed: int = 1
    weights: LossWeights = field(default_factory=lambda: LossWeights(w1=0.0))
    guided: bool = False
    rho: float = 0.95
    epsilon: float = 1e-6
    keep_checkpoints: int = 30
    clip_norm: float | None = 1.0  # global gradient-norm ceiling; None disables

    def __post_init__(self):
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


# ---------------------------------------------------------------------------
# alignment costs on plain arrays


def _check_pair(a, alpha):
    a, alpha = np.asarray(a, dtype=np.float64), np.asarray(alpha, dtype=np.float64)
    if a.shape != alpha.shape or a.ndim != 2:
        raise ShapeError(f"alignment {a.shape} vs attention {alpha.shape}")
    live = a.sum(axis=1) > 0
    return a, alpha, live


def alignment_cost_ce(a, alpha) -> float:
    """``-(1/T_u) sum_t sum_i A_ti log alpha_ti`` over linked rows ``t``."""
    a, alpha, live = _check_pair(a, alpha)
    if not live.any():
        return 0.0
    logs = np.log(np.maximum(alpha[live], mdl.ALIGN_LOG_FLOOR))
    return float(-(a[live] * logs).sum() / live.sum())


def alignment_cost_mse(a, alpha) -> float:
    """``(1/T_u) sum_t sum_i (A_ti - alpha_ti)^2`` over linked rows ``t``."""
    a, alpha, live = _check_pair(a, alpha)
    if not live.any():
        return 0.0
    return float(((a[live] - alpha[live]) ** 2).sum() / live.sum())


# ---------------------------------------------------------------------------
# loss and optimizer


def combined_loss(model: Model, examples: Sequence[Example], weights: LossWeights, guided: bool = True):
    """Loss, gradients and the two cost terms for one batch."""
    if guided and any(ex.links is None for ex in examples):
        raise ValueError("guided training needs an alignment for every pair")
    batch = make_batch(examples, need_align=guided)
    tape = Tape(model.params)
    logp, alpha = model.teacher_forced(tape, batch)
    h_d = mdl.decoder_cost(logp, batch)
    loss = h_d * weights.w2 if weights.w2 != 1.0 else h_d
    g_val = 0.0
    if guided:
        g = mdl.alignment_cost(alpha, batch, weights.divergence)
        g_val = float(g.value)
        if weights.w1 != 0.0:
            loss = loss + g * weights.w1
    grads = backward(tape, loss)
    return float(loss.value), grads, {"decoder_cost": float(h_d.value), "alignment_cost": g_val}


def init_optimizer(params: ParameterStore, rho: float = 0.95, epsilon: float = 1e-6) -> OptimizerState:
    return OptimizerState(
        rho, epsilon,
        {k: np.zeros_like(v) for k, v in params.items()},
        {k: np.zeros_like(v) for k, v in params.items()},
    )


def clip_gradients(grads: dict, max_norm: float | None) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adadelta_step(params: ParameterStore, grads: dict, state: OptimizerState) -> None:
    """In-place AdaDelta update of ``params`` and ``state``."""
    rho, eps = state.rho, state.epsilon
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name}: {g.shape} vs {p.shape}")
        g2, d2 = state.g2[name], state.d2[name]
        g2 *= rho
        g2 += (1.0 - rho) * g * g
        delta = -np.sqrt(d2 + eps) / np.sqrt(g2 + eps) * g
        d2 *= rho
        d2 += (1.0 - rho) * delta * delta
        p += delta


# ---------------------------------------------------------------------------
# data helpers


def encode_corpus(src_sents, tgt_sents, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                  alignments=None, topics=None) -> list:
    """Encode token lists into :class:`Example` objects; alignments may be Pharaoh lines."""
    if len(src_sents) != len(tgt_sents):
        raise ValueError(f"source has {len(src_sents)} lines, target {len(tgt_sents)}")
    if alignments is not None and len(alignments) != len(src_sents):
        raise ValueError(f"corpus has {len(src_sents)} pairs but {len(alignments)} alignments")
    if topics is not None and len(topics) != len(src_sents):
        raise ValueError(f"corpus has {len(src_sents)} pairs but {len(topics)} topic vectors")
    out = []
    for n, (s, t) in enumerate(zip(src_sents, tgt_sents)):
        links = None
        if alignments is not None:
            links = alignments[n]
            if isinstance(links, str):
                links = parse_pharaoh(links, len(t), len(s), n + 1)
        out.append(Example(src_vocab.encode(s), tgt_vocab.encode(t), links,
                           None if topics is None else topics[n]))
    return out


def batches_for_epoch(n: int, batch_size: int, seed: int, epoch: int) -> list:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


def evaluate_cost(model: Model, examples: Sequence[Example], batch_size: int = 100) -> float:
    """Mean per-pair decoder cost over ``examples`` (no gradients)."""
    total = 0.0
    for k in range(0, len(examples), batch_size):
        chunk = examples[k:k + batch_size]
        batch = make_batch(chunk)
        logp, _ = model.teacher_forced(Tape(model.params, record=False), batch)
        total += float(mdl.decoder_cost(logp, batch).value) * len(chunk)
    return total / len(examples)


# ---------------------------------------------------------------------------
# training loop


def train(
    examples: Sequence[Example],
    model_config: ModelConfig,
    config: TrainConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    params: ParameterStore | None = None,
    resume: Checkpoint | None = None,
    log_path=None,
) -> Iterator[Checkpoint]:
    """Run training, yielding a :class:`Checkpoint` every ``checkpoint_every`` batches.

    Without ``checkpoint_every`` a checkpoint is produced at the end of each
    epoch.  The alignment weight is multiplied by ``decay_factor`` after
    every epoch.  Shuffling depends only on ``(seed, epoch)``, so resuming
    from a checkpoint replays the uninterrupted run exactly.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("empty training corpus")
    if config.guided:
        missing = [k for k, ex in enumerate(examples) if ex.links is None]
        if missing:
            raise ValueError(f"guided training: pair {missing[0]} has no alignment")
    if model_config.use_topic and any(ex.topic is None for ex in examples):
        raise ValueError("topic-aware model needs a topic vector for every pair")
    if (len(src_vocab), len(tgt_vocab)) != (model_config.src_vocab_size, model_config.tgt_vocab_size):
        raise ValueError("vocabulary sizes do not match the model configuration")

    weights = config.weights
    if resume is not None:
        params = resume.params.copy()
        opt = resume.optimizer.copy()
        epoch, start_batch, step, w1 = resume.epoch, resume.batch, resume.step, resume.w1
    else:
        params = params.copy() if params is not None else mdl.init_params(model_config, config.seed)
        opt = init_optimizer(params, config.rho, config.epsilon)
        epoch, start_batch, step, w1 = 0, 0, 0, weights.w1
    model = Model(model_config, params)
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    started = time.time()
    sums = {"decoder_cost": 0.0, "alignment_cost": 0.0}
    since = 0
    try:
        while epoch < config.max_epochs:
            plan = batches_for_epoch(len(examples), config.batch_size, config.seed, epoch)
            for b in range(start_batch, len(plan)):
                chunk = [examples[k] for k in plan[b]]
                _, grads, parts = combined_loss(model, chunk, replace(weights, w1=w1), config.guided)
                clip_gradients(grads, config.clip_norm)
                adadelta_step(params, grads, opt)
                step += 1
                since += 1
                for key in sums:
                    sums[key] += parts[key]
                end_of_epoch = b == len(plan) - 1
                if end_of_epoch:
                    w1 *= weights.decay_factor
                    epoch, start_batch = epoch + 1, 0
                due = step % config.checkpoint_every == 0 if config.checkpoint_every else end_of_epoch
                last = end_of_epoch and epoch >= config.max_epochs
                if due or last:
                    means = {k: v / since for k, v in sums.items()}
                    ckpt = Checkpoint(
                        params.copy(), model_config, src_vocab, tgt_vocab, opt.copy(),
                        epoch=epoch, batch=0 if end_of_epoch else b + 1, step=step, w1=w1,
                        metadata={"seed": config.seed, **means},
                    )
                    if log:
                        log.write(json.dumps({"epoch": ckpt.epoch, "batch": ckpt.batch, **means,
                                              "w1": w1, "wall_time": round(time.time() - started, 3)}) + "\n")
                        log.flush()
                    sums = {k: 0.0 for k in sums}
                    since = 0
                    yield ckpt
            start_batch = 0
    finally:
        if log:
            log.close()


def save_stream(checkpoints: Iterable[Checkpoint], directory, keep: int = 30) -> list:
    """Write checkpoints as ``ckpt-<step>.bin``, keeping only the newest ``keep`` on disk."""
    os.makedirs(directory, exist_ok=True)
    kept = []
    for ckpt in checkpoints:
        path = os.path.join(directory, f"ckpt-{ckpt.step:08d}.bin")
        ckpt.save(path)
        kept.append(path)
        while len(kept) > keep:
            os.remove(kept.pop(0))
    return kept


# ---------------------------------------------------------------------------
# model selection and domain adaptation


def selection_score(bleu: float, ter: float) -> float:
    return bleu + (1.0 - ter)


def select_model(checkpoints: Sequence, dev, score_fn: Callable) -> tuple:
    """Checkpoint maximizing ``BLEU + (1 - TER)`` on ``dev``; earliest wins ties.

    ``score_fn(checkpoint, dev)`` returns ``(bleu, ter)`` as fractions.
    Returns ``(best, scores)``.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    if dev is None or len(dev) == 0:
        raise ValueError("empty development set")
    scores = [selection_score(*score_fn(c, dev)) for c in checkpoints]
    best = int(np.argmax(scores))
    return checkpoints[best], scores


def adapt_params(base: Checkpoint, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 seed: int = 1, scale: float = 0.08) -> tuple:
    """Re-index vocabulary-dependent weights for new vocabularies.

    Tokens shared with the base vocabularies keep their trained rows (and
    output columns); new tokens are freshly initialized.
    """
    rng = np.random.default_rng(seed)
    cfg = replace(base.model_config, src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab))
    old = base.params
    p = old.copy()

    def remap(arr, old_vocab, new_vocab, axis, init):
        shape = list(arr.shape)
        shape[axis] = len(new_vocab)
        out = init(tuple(shape))
        for k, tok in enumerate(new_vocab.itos):
            j = old_vocab.stoi.get(tok)
            if j is not None:
                idx_new = [slice(None)] * arr.ndim
                idx_old = [slice(None)] * arr.ndim
                idx_new[axis], idx_old[axis] = k, j
                out[tuple(idx_new)] = arr[tuple(idx_old)]
        return out

    rand = lambda shape: uniform_init(shape, rng, scale, old.dtype)  # noqa: E731
    zeros = lambda shape: np.zeros(shape, dtype=old.dtype)  # noqa: E731
    p["src_embed"] = remap(old["src_embed"], base.src_vocab, src_vocab, 0, rand)
    p["tgt_embed"] = remap(old["tgt_embed"], base.tgt_vocab, tgt_vocab, 0, rand)
    p["out.W"] = remap(old["out.W"], base.tgt_vocab, tgt_vocab, 1, rand)
    p["out.b"] = remap(old["out.b"], base.tgt_vocab, tgt_vocab, 0, zeros)
    return cfg, p


def adapt_domain(base: Checkpoint, examples: Sequence[Example], src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, config: TrainConfig, model_config: ModelConfig | None = None,
                 log_path=None) -> Iterator[Checkpoint]:
    """Continue training ``base`` on in-domain data with in-domain vocabularies."""
    cfg, params = adapt_params(base, src_vocab, tgt_vocab, config.seed)
    if model_config is not None:
        mine = replace(model_config, src_vocab_size=cfg.src_vocab_size, tgt_vocab_size=cfg.tgt_vocab_size)
        if mine != cfg:
            raise ValueError(f"model configuration {model_config} does not match checkpoint {base.model_config}")
    return train(examples, cfg, config, src_vocab, tgt_vocab, params=params, log_path=log_path)


def perplexity(model: Model, examples: Sequence[Example]) -> float:
    """Token-level perplexity (sentence-end included)."""
    nll, count = 0.0, 0
    for k in range(0, len(examples), 100):
        chunk = examples[k:k + 100]
        batch = make_batch(chunk)
        logp, _ = model.teacher_forced(Tape(model.params, record=False), batch)
        nll -= float((logp.value * batch.tgt_mask).sum())
        count += int(batch.tgt_mask.sum())
    return math.exp(nll / count)
