"""Command-line entry point: ``ganmt <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment).  Keys are option names with dashes or
underscores; flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bootstrap as bs
from .checkpoint import Checkpoint
from .data import (FormatError, PlaceholderRules, SentencePair, Vocabulary, build_vocab, format_pharaoh,
                   parse_pharaoh, preprocess, read_lines, read_sidecar, read_tokenized, read_topics, sidecar_line)
from .decoding import format_distance_tsv, topic_distance_matrix, translate
from .evaluation import evaluate
from .ibm1 import ibm1_align
from .model import Model, ModelConfig
from .training import (LossWeights, TrainConfig, adapt_domain, encode_corpus, save_stream, select_model, train)

log = logging.getLogger("ganmt")


class UsageError(Exception):
    """Bad input detected by a subcommand; carries the exit code."""

    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _truth(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def apply_config(parser: argparse.ArgumentParser, values: dict) -> None:
    """Install config-file values as parser defaults, converting with each option's type."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = actions[key]
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[key] = _truth(raw)
            elif action.nargs in ("+", "*"):
                defaults[key] = [action.type(v) if action.type else v for v in raw.split()]
            else:
                defaults[key] = action.type(raw) if action.type else raw
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from None
        action.required = False
    parser.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared helpers


def _parallel_lines(*paths) -> list:
    """Read files that must agree line by line; exit code 2 names the first unmatched line."""
    contents = [read_lines(p) for p in paths]
    sizes = [len(c) for c in contents]
    if len(set(sizes)) > 1:
        raise UsageError(f"line-count mismatch ({', '.join(f'{p}: {n}' for p, n in zip(paths, sizes))}); "
                         f"first bad line {min(sizes) + 1}", code=2)
    return contents


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def _threads() -> int:
    try:
        cap = int(os.environ.get("GANMT_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def _load_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


def _check_vocab(ckpt: Checkpoint, path, side: str, vocab_path) -> None:
    if vocab_path is None:
        return
    mine = Vocabulary.load(vocab_path)
    theirs = ckpt.src_vocab if side == "source" else ckpt.tgt_vocab
    if mine.digest() != theirs.digest():
        raise UsageError(f"{side} vocabulary {vocab_path} (sha256 {mine.digest()}) does not match "
                         f"checkpoint {path} (sha256 {theirs.digest()})", code=3)


def _topic_dim(args, corpus_len: int):
    if not args.topics:
        return None
    if not args.topic_dim:
        raise UsageError("--topics needs --topic-dim")
    try:
        topics = read_topics(args.topics, args.topic_dim)
    except FormatError as exc:
        raise UsageError(str(exc)) from None
    if len(topics) != corpus_len:
        raise UsageError(f"topic file has {len(topics)} lines, corpus {corpus_len}; "
                         f"first bad line {min(len(topics), corpus_len) + 1}", code=2)
    return topics


def _train_config(args, guided: bool) -> TrainConfig:
    w1 = args.w1 if args.w1 is not None else (1.0 if guided else 0.0)
    if w1 > 0 and not guided:
        raise UsageError("--w1 > 0 needs --align")
    weights = LossWeights(w1=w1, w2=args.w2, decay_factor=args.decay, divergence=args.divergence)
    return TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs, checkpoint_every=args.checkpoint_every,
                       seed=args.seed, weights=weights, guided=guided, rho=args.rho, epsilon=args.epsilon,
                       keep_checkpoints=args.keep, clip_norm=args.clip_norm or None)


def _read_training_data(args):
    paths = [args.src, args.tgt] + ([args.align] if args.align else [])
    contents = _parallel_lines(*paths)
    src = [line.split() for line in contents[0]]
    tgt = [line.split() for line in contents[1]]
    align = None
    if args.align:
        try:
            align = [parse_pharaoh(line, len(t), len(s), n + 1)
                     for n, (line, s, t) in enumerate(zip(contents[2], src, tgt))]
        except FormatError as exc:
            raise UsageError(str(exc)) from None
    return src, tgt, align, _topic_dim(args, len(src))


def _dev_selection(args, kept: list, out_dir: str) -> None:
    if not (args.dev_src and args.dev_tgt):
        return
    dev_src, dev_tgt = _parallel_lines(args.dev_src, args.dev_tgt)
    dev = list(zip([s.split() for s in dev_src], [t.split() for t in dev_tgt]))
    if Checkpoint.load(kept[-1]).model_config.use_topic:
        log.warning("dev selection skipped: topic-aware models need per-sentence topics")
        return

    def score(path, data):
        ckpt = Checkpoint.load(path)
        model = Model(ckpt.model_config, ckpt.params)
        hyps = [translate([model], s, ckpt.src_vocab, ckpt.tgt_vocab, beam=args.beam).tokens for s, _ in data]
        report = evaluate(hyps, [t for _, t in data])
        return report.bleu, report.ter

    best, scores = select_model(kept, dev, score)
    for path, s in zip(kept, scores):
        log.info("dev %s BLEU+(1-TER) = %.4f", os.path.basename(path), s)
    target = os.path.join(out_dir, "best.bin")
    with open(best, "rb") as f, open(target, "wb") as g:
        g.write(f.read())
    log.info("selected %s -> %s", best, target)


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    try:
        rules = PlaceholderRules.from_file(args.rules) if args.rules else PlaceholderRules()
    except (OSError, FormatError, ValueError) as exc:
        raise UsageError(f"bad rules file: {exc}") from None
    try:
        lines = read_lines(args.input)
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from None
    toks, side = [], []
    for n, line in enumerate(lines, 1):
        tokens, entries = preprocess(line, rules)
        toks.append(" ".join(tokens))
        side.append(sidecar_line(n, entries))
    _write_lines(args.output, toks)
    if args.sidecar:
        _write_lines(args.sidecar, side)
    return 0


def cmd_align(args) -> int:
    src, tgt = _parallel_lines(args.src, args.tgt)
    corpus = [SentencePair(s.split(), t.split(), n + 1) for n, (s, t) in enumerate(zip(src, tgt))]
    _write_lines(args.output, ibm1_align(corpus, args.iterations))
    return 0


def cmd_bootstrap(args) -> int:
    src, tgt, align = _parallel_lines(args.src, args.tgt, args.align)
    corpus, units, unit_links = [], [], []
    for n, (s, t, a) in enumerate(zip(src, tgt, align), 1):
        pair = SentencePair(s.split(), t.split(), n)
        try:
            links = parse_pharaoh(a, len(pair.target), len(pair.source), n)
        except FormatError as exc:
            raise UsageError(str(exc)) from None
        corpus.append(pair)
        for span in bs.extract_spans(pair.source, pair.target, links, args.min_len, args.max_len):
            s1, s2, t1, t2 = span
            units.append(SentencePair(pair.source[s1:s2 + 1], pair.target[t1:t2 + 1], n))
            unit_links.append(bs.sub_links(links, span))
    merged = bs.bootstrap_merge(corpus, units)
    _write_lines(args.out_src, [" ".join(p.source) for p in merged])
    _write_lines(args.out_tgt, [" ".join(p.target) for p in merged])
    if args.out_align:
        _write_lines(args.out_align, list(align) + [format_pharaoh(l) for l in unit_links])
    log.info("%d sentence pairs + %d sub-sentence units", len(corpus), len(units))
    return 0


def cmd_train(args) -> int:
    log.info("seed %d", args.seed)
    src, tgt, align, topics = _read_training_data(args)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.resume:
        resume = _load_checkpoint(args.resume)
        sv, tv, mc = resume.src_vocab, resume.tgt_vocab, resume.model_config
        log.info("resuming from %s at epoch %d batch %d", args.resume, resume.epoch, resume.batch)
    else:
        resume = None
        sv = Vocabulary.load(args.src_vocab) if args.src_vocab else build_vocab(src, args.src_vocab_size)
        tv = Vocabulary.load(args.tgt_vocab) if args.tgt_vocab else build_vocab(tgt, args.tgt_vocab_size)
        mc = ModelConfig(len(sv), len(tv), embed_dim=args.embed_dim, cell_dim=args.cell_dim,
                         topic_dim=args.topic_dim if topics is not None else 0, use_topic=topics is not None)
    sv.save(os.path.join(args.out_dir, "src.vocab"))
    tv.save(os.path.join(args.out_dir, "tgt.vocab"))
    config = _train_config(args, align is not None)
    examples = encode_corpus(src, tgt, sv, tv, align, topics)
    stream = train(examples, mc, config, sv, tv, resume=resume, log_path=args.log)
    kept = save_stream(stream, args.out_dir, config.keep_checkpoints)
    log.info("wrote %d checkpoint(s) to %s", len(kept), args.out_dir)
    _dev_selection(args, kept, args.out_dir)
    return 0


def cmd_adapt(args) -> int:
    log.info("seed %d", args.seed)
    base = _load_checkpoint(args.base)
    src, tgt, align, topics = _read_training_data(args)
    if topics is not None and not base.model_config.use_topic:
        raise UsageError("base checkpoint is not topic-aware")
    os.makedirs(args.out_dir, exist_ok=True)
    sv = Vocabulary.load(args.src_vocab) if args.src_vocab else build_vocab(src, args.src_vocab_size)
    tv = Vocabulary.load(args.tgt_vocab) if args.tgt_vocab else build_vocab(tgt, args.tgt_vocab_size)
    sv.save(os.path.join(args.out_dir, "src.vocab"))
    tv.save(os.path.join(args.out_dir, "tgt.vocab"))
    config = _train_config(args, align is not None)
    examples = encode_corpus(src, tgt, sv, tv, align, topics)
    kept = save_stream(adapt_domain(base, examples, sv, tv, config, log_path=args.log), args.out_dir,
                       config.keep_checkpoints)
    log.info("wrote %d checkpoint(s) to %s", len(kept), args.out_dir)
    _dev_selection(args, kept, args.out_dir)
    return 0


def cmd_translate(args) -> int:
    paths = args.checkpoint
    ckpts = [_load_checkpoint(p) for p in paths]
    first = ckpts[0]
    for path, ck in zip(paths[1:], ckpts[1:]):
        for side, a, b in (("source", first.src_vocab, ck.src_vocab), ("target", first.tgt_vocab, ck.tgt_vocab)):
            if a.digest() != b.digest():
                raise UsageError(f"{side} vocabulary of {path} (sha256 {b.digest()}) differs from "
                                 f"{paths[0]} (sha256 {a.digest()})", code=3)
        if ck.model_config.use_topic != first.model_config.use_topic:
            raise UsageError(f"{path} and {paths[0]} disagree on topic use", code=3)
    for path, ck in zip(paths, ckpts):
        _check_vocab(ck, path, "source", args.src_vocab)
        _check_vocab(ck, path, "target", args.tgt_vocab)
    models = [Model(ck.model_config, ck.params) for ck in ckpts]
    sents = read_tokenized(args.input)
    topics = [None] * len(sents)
    if first.model_config.use_topic:
        if not args.topics:
            raise UsageError("topic-aware checkpoint needs --topics")
        args.topic_dim = first.model_config.topic_dim
        topics = _topic_dim(args, len(sents))
    elif args.topics:
        raise UsageError("--topics given but the checkpoint is not topic-aware")
    entries = read_sidecar(args.sidecar) if args.sidecar else {}

    def run(n):
        return translate(models, sents[n], first.src_vocab, first.tgt_vocab, topics[n], args.beam,
                         entries.get(n + 1, ()), args.max_len)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, range(len(sents))))
    _write_lines(args.output, [" ".join(r.tokens) for r in results])
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            for n, r in enumerate(results, 1):
                f.write(json.dumps({
                    "line": n, "tokens": r.tokens, "score": r.score,
                    "attention": np.round(r.attention, 6).tolist(),
                    "alignment": " ".join(f"{i}-{t}" for t, i in r.alignment),
                }) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    hyps, refs = _parallel_lines(args.hyp, args.ref)
    try:
        report = evaluate([h.split() for h in hyps], [r.split() for r in refs])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(report.summary())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def cmd_topicdist(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    if not ckpt.model_config.use_topic:
        raise UsageError(f"{args.checkpoint} is not topic-aware")
    model = Model(ckpt.model_config, ckpt.params)
    d = ckpt.model_config.topic_dim
    labels = read_lines(args.labels) if args.labels else [f"topic{k}" for k in range(d)]
    if len(labels) != d:
        raise UsageError(f"{len(labels)} labels for {d} topics", code=2)
    try:
        dist = topic_distance_matrix([model.topic_embedding(k) for k in range(d)])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = format_distance_tsv(dist, labels)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _training_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--src", required=True, help="tokenized source corpus")
    p.add_argument("--tgt", required=True, help="tokenized target corpus")
    p.add_argument("--align", help="Pharaoh alignments; enables guided training")
    p.add_argument("--topics", help="topic file, one line per pair")
    p.add_argument("--topic-dim", type=int, default=0, help="number of topics D")
    p.add_argument("--src-vocab", help="source vocabulary file (default: build from corpus)")
    p.add_argument("--tgt-vocab", help="target vocabulary file (default: build from corpus)")
    p.add_argument("--src-vocab-size", type=int, default=30000, help="source vocabulary size incl. reserved tokens")
    p.add_argument("--tgt-vocab-size", type=int, default=30000, help="target vocabulary size incl. reserved tokens")
    p.add_argument("--batch-size", type=int, default=100, help="pairs per update")
    p.add_argument("--epochs", type=int, default=10, help="number of passes over the corpus")
    p.add_argument("--checkpoint-every", type=int, help="batches between checkpoints (default: each epoch)")
    p.add_argument("--keep", type=int, default=30, help="checkpoints kept on disk")
    p.add_argument("--w1", type=float, help="alignment cost weight (default 1 with --align, else 0)")
    p.add_argument("--w2", type=float, default=1.0, help="decoder cost weight")
    p.add_argument("--decay", type=float, default=1.0, help="factor applied to w1 after each epoch")
    p.add_argument("--divergence", choices=("cross_entropy", "squared_error"), default="cross_entropy",
                   help="attention/alignment divergence")
    p.add_argument("--rho", type=float, default=0.95, help="AdaDelta decay rate")
    p.add_argument("--epsilon", type=float, default=1e-6, help="AdaDelta epsilon")
    p.add_argument("--clip-norm", type=float, default=1.0, help="gradient norm ceiling (0 disables)")
    p.add_argument("--seed", type=int, default=1, help="random seed")
    p.add_argument("--out-dir", required=True, help="checkpoint directory")
    p.add_argument("--log", help="JSON-lines training log")
    p.add_argument("--dev-src", help="dev source for checkpoint selection")
    p.add_argument("--dev-tgt", help="dev reference for checkpoint selection")
    p.add_argument("--beam", type=int, default=10, help="beam size for dev decoding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganmt", description="Attention NMT with guided alignment and topics.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="file of 'key = value' defaults")
        p.set_defaults(func=func)
        return p

    p = add("preprocess", cmd_preprocess, "tokenize, lowercase and substitute placeholders")
    p.add_argument("--input", required=True, help="raw text, one sentence per line")
    p.add_argument("--output", required=True, help="tokenized output")
    p.add_argument("--sidecar", help="placeholder sidecar output (JSON lines)")
    p.add_argument("--rules", help="placeholder rules file, 'class<TAB>regex' per line")

    p = add("align", cmd_align, "IBM Model 1 Viterbi alignments in Pharaoh format")
    p.add_argument("--src", required=True, help="tokenized source corpus")
    p.add_argument("--tgt", required=True, help="tokenized target corpus")
    p.add_argument("--output", required=True, help="Pharaoh output")
    p.add_argument("--iterations", type=int, default=5, help="EM iterations")

    p = add("bootstrap", cmd_bootstrap, "append punctuation-bounded sub-sentence units to a corpus")
    p.add_argument("--src", required=True, help="tokenized source corpus")
    p.add_argument("--tgt", required=True, help="tokenized target corpus")
    p.add_argument("--align", required=True, help="Pharaoh alignments")
    p.add_argument("--out-src", required=True, help="augmented source output")
    p.add_argument("--out-tgt", required=True, help="augmented target output")
    p.add_argument("--out-align", help="augmented alignments output")
    p.add_argument("--min-len", type=int, default=bs.MIN_SOURCE_LEN, help="shortest source unit")
    p.add_argument("--max-len", type=int, default=bs.MAX_SOURCE_LEN, help="longest source unit")

    p = add("train", cmd_train, "train a model from scratch or resume")
    _training_options(p)
    p.add_argument("--embed-dim", type=int, default=620, help="word embedding size")
    p.add_argument("--cell-dim", type=int, default=1000, help="GRU state size")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = add("adapt", cmd_adapt, "continue training a checkpoint on in-domain data")
    _training_options(p)
    p.add_argument("--base", required=True, help="out-of-domain checkpoint")

    p = add("translate", cmd_translate, "beam-search translation with one model or an ensemble")
    p.add_argument("--checkpoint", "--ensemble", nargs="+", required=True, help="one or more checkpoints")
    p.add_argument("--input", required=True, help="tokenized source text")
    p.add_argument("--output", required=True, help="translations, one per line")
    p.add_argument("--topics", help="topic file for topic-aware models")
    p.add_argument("--topic-dim", type=int, default=0, help=argparse.SUPPRESS)
    p.add_argument("--sidecar", help="placeholder sidecar for the input")
    p.add_argument("--beam", type=int, default=10, help="beam size")
    p.add_argument("--max-len", type=int, help="maximum output length (default 3n+10)")
    p.add_argument("--json", help="per-line JSON with attention and hard alignment")
    p.add_argument("--src-vocab", help="check the checkpoint against this source vocabulary")
    p.add_argument("--tgt-vocab", help="check the checkpoint against this target vocabulary")

    p = add("evaluate", cmd_evaluate, "corpus BLEU and TER")
    p.add_argument("--hyp", required=True, help="hypotheses, one per line")
    p.add_argument("--ref", required=True, help="references, one per line")
    p.add_argument("--json", help="write the full score report here")

    p = add("topicdist", cmd_topicdist, "cosine distances between topic embeddings (TSV)")
    p.add_argument("--checkpoint", required=True, help="topic-aware checkpoint")
    p.add_argument("--labels", help="topic labels, one per line")
    p.add_argument("--output", help="TSV output (default stdout)")
    return parser


def _find_config(argv, parser) -> tuple:
    """``(config path, subcommand)`` located before full parsing, so file values can satisfy required options."""
    commands = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in commands), None)
    path = None
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            path = argv[k + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    return (path, command) if command else (None, None)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config_path, command = _find_config(argv, parser)
        if config_path:
            apply_config(parser._subparsers._group_actions[0].choices[command], read_config(config_path))
        args = parser.parse_args(argv)
        if args.verbose:
            log.setLevel(logging.DEBUG)
        return args.func(args)
    except UsageError as exc:
        print(f"ganmt: error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, FormatError, ValueError) as exc:
        print(f"ganmt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
