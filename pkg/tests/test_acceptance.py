"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py).  Run alone with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from ganmt import numeric as nm
from ganmt.bootstrap import extract_spans
from ganmt.checkpoint import Checkpoint
from ganmt.data import (PLACEHOLDER_CLASSES, RESERVED, UNK, Vocabulary, build_vocab, links_to_matrix,
                        load_topic_vector)
from ganmt.decoding import beam_search, translate
from ganmt.evaluation import bleu, levenshtein, ter
from ganmt.model import DecoderState, Example, Model, ModelConfig, alignment_cost, decoder_cost, init_params, make_batch
from ganmt.synthetic import monotone_corpus, placeholder_sentences, topic_corpus, two_domain_corpora
from ganmt.training import (LossWeights, TrainConfig, adapt_domain, alignment_cost_ce, alignment_cost_mse,
                            encode_corpus, evaluate_cost, perplexity, select_model, train)

from test_bootstrap import brute_force_spans, random_pair
from toy import ForcedModel

RESULTS: list = []


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  [{n:2d}] {title}: {detail}")
    assert ok, detail


def tiny_guided(seed=0, scale=0.5):
    cfg = ModelConfig(20, 20, embed_dim=8, cell_dim=8, topic_dim=3, use_topic=True)
    p = init_params(cfg, seed=seed, scale=scale, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for name in p:
        if name.endswith(".b") or name.endswith("b_r"):
            p[name] = rng.uniform(-scale, scale, p[name].shape)
    return Model(cfg, p)


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_01_gradients():
    start = time.time()
    m = tiny_guided(seed=7)
    rng = np.random.default_rng(7)
    examples = []
    for s_len, t_len in [(4, 5), (5, 3), (2, 4)]:
        links = sorted({(int(rng.integers(s_len)), j) for j in range(t_len)} | {(0, 0)})
        examples.append(Example(list(rng.integers(5, 20, s_len)) + [0], list(rng.integers(5, 20, t_len)) + [0],
                                links, rng.dirichlet(np.ones(3))))
    batch = make_batch(examples, need_align=True)
    worst = {}
    for divergence in ("cross_entropy", "squared_error"):
        def loss(tape):
            logp, alpha = m.teacher_forced(tape, batch)
            return decoder_cost(logp, batch) + alignment_cost(alpha, batch, divergence)

        worst[divergence] = nm.finite_difference_check(loss, m.params, epsilon=1e-3)
    elapsed = time.time() - start
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    verdict(1, "gradient check", ok,
            f"max rel err G_ce {worst['cross_entropy']:.2e}, G_mse {worst['squared_error']:.2e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. simplex invariants


def test_02_simplex_invariants():
    rng = np.random.default_rng(2)
    models = [tiny_guided(seed=s, scale=float(rng.uniform(0.1, 1.0))) for s in range(10)]
    worst = 0.0
    for k in range(1000):
        m = models[k % len(models)]
        n = int(rng.integers(1, 10))
        ann = m.encode(list(rng.integers(0, 20, n)))
        state = m.initial_state(ann, 2)
        topic = load_topic_vector(list(rng.uniform(0, 1, 3)), 3)
        dist, _, alpha = m.decoder_step([-1, int(rng.integers(0, 20))], state, ann, topic)
        t_len = int(rng.integers(1, 8))
        links = [(int(rng.integers(n)), int(rng.integers(t_len))) for _ in range(int(rng.integers(1, 12)))]
        a = links_to_matrix(links, t_len, n)
        linked = a.sum(axis=1) > 0
        labels = load_topic_vector([int(x) for x in rng.choice(5, int(rng.integers(1, 4)), replace=False)], 5)
        sums = np.concatenate([alpha.sum(axis=1), dist.sum(axis=1), a[linked].sum(axis=1),
                               [topic.sum(), labels.sum()]])
        worst = max(worst, float(np.abs(sums - 1).max()))
    verdict(2, "simplex invariants", worst <= 1e-6, f"1000 checks, max |sum - 1| = {worst:.1e}")


# ---------------------------------------------------------------------------
# 3. guided alignment on a monotone corpus


def diagonal_accuracy(model, examples):
    hit = total = 0
    for ex in examples:
        _, att = model.forward_teacher_forced(ex.src, ex.tgt)
        n = len(ex.src) - 1
        hit += int((att[:n, :n].argmax(axis=1) == np.arange(n)).sum())
        total += n
    return hit / total


@pytest.fixture(scope="module")
def copy_runs():
    pairs, links = monotone_corpus(550, vocab=30, min_len=5, max_len=12, seed=1)
    sv = build_vocab([p.source for p in pairs], 100)
    tv = build_vocab([p.target for p in pairs], 100)
    train_ex = encode_corpus([p.source for p in pairs[:500]], [p.target for p in pairs[:500]], sv, tv, links[:500])
    dev_ex = encode_corpus([p.source for p in pairs[500:]], [p.target for p in pairs[500:]], sv, tv, links[500:])
    mc = ModelConfig(len(sv), len(tv), embed_dim=32, cell_dim=32)
    runs = {}
    start = time.time()
    for name, weights in [("baseline", LossWeights(w1=0.0)), ("guided", LossWeights(w1=1.0, w2=1.0)),
                          ("decay", LossWeights(w1=1.0, w2=1.0, decay_factor=0.9))]:
        cfg = TrainConfig(batch_size=2, max_epochs=10, weights=weights, guided=True, seed=1)
        costs = []
        for ck in train(train_ex, mc, cfg, sv, tv):
            model = Model(mc, ck.params)
            costs.append(evaluate_cost(model, dev_ex))
        runs[name] = {"costs": costs, "acc": diagonal_accuracy(model, dev_ex)}
    runs["elapsed"] = time.time() - start
    return runs


def test_03_guided_alignment(copy_runs):
    a, b, d = copy_runs["baseline"], copy_runs["guided"], copy_runs["decay"]
    ratio = d["costs"][-1] / b["costs"][-1]
    ok = (b["acc"] >= 0.9 and b["acc"] >= a["acc"] + 0.10 and abs(ratio - 1) <= 0.10
          and copy_runs["elapsed"] < 300)
    verdict(3, "guided alignment", ok,
            f"diag acc baseline {a['acc']:.3f} guided {b['acc']:.3f}; dev cost guided {b['costs'][-1]:.3f} "
            f"decay {d['costs'][-1]:.3f} (ratio {ratio:.3f}); {copy_runs['elapsed']:.0f}s")


def test_copy_task_dev_cost_falls_over_first_epochs(copy_runs):
    # the unguided baseline sits on a plateau near ln(V) early on, so only
    # the alignment-supervised runs are held to a strict decrease
    for name in ("guided", "decay"):
        first = copy_runs[name]["costs"][:3]
        assert first[0] > first[1] > first[2], (name, first)


# ---------------------------------------------------------------------------
# 4. topic disambiguation


def disambiguation_accuracy(model, sv, tv, pairs, topics, use_topic):
    y1, y2 = tv.stoi["y1"], tv.stoi["y2"]
    hit = 0
    for pair, k in zip(pairs, topics):
        vec = load_topic_vector([k], 2) if use_topic else None
        ann = model.encode(sv.encode(pair.source))
        state, prev = model.initial_state(ann, 1), -1
        for tok, y in zip(pair.target, tv.encode(pair.target)):
            dist, state, _ = model.decoder_step([prev], state, ann, vec)
            if tok in ("y1", "y2"):
                want, other = (y1, y2) if k == 0 else (y2, y1)
                hit += dist[0, want] > dist[0, other]
            prev = y
    return hit / len(pairs)


def test_04_topic_disambiguation():
    start = time.time()
    pairs, topics, links = topic_corpus(1200, seed=1)
    sv = build_vocab([p.source for p in pairs], 100)
    tv = build_vocab([p.target for p in pairs], 100)
    vecs = [load_topic_vector([k], 2) for k in topics]
    acc = {}
    for use_topic in (True, False):
        ex = encode_corpus([p.source for p in pairs[:1000]], [p.target for p in pairs[:1000]], sv, tv,
                           topics=vecs[:1000] if use_topic else None)
        mc = ModelConfig(len(sv), len(tv), embed_dim=32, cell_dim=32, topic_dim=2 if use_topic else 0,
                         use_topic=use_topic)
        ck = list(train(ex, mc, TrainConfig(batch_size=5, max_epochs=3, seed=1), sv, tv))[-1]
        acc[use_topic] = disambiguation_accuracy(Model(mc, ck.params), sv, tv, pairs[1000:], topics[1000:],
                                                 use_topic)
    # readout with a one-hot topic = topic-less readout + the matching column
    rng = np.random.default_rng(4)
    identity_err = 0.0
    for seed in range(50):
        m = tiny_guided(seed=seed)
        plain = Model(ModelConfig(**{**m.config.to_dict(), "use_topic": False, "topic_dim": 0}), m.params)
        ctx = rng.normal(size=(1, 16))
        state = DecoderState(rng.normal(size=(1, 8)), rng.normal(size=(1, 8)))
        k = seed % 3
        diff = (m.readout_preactivation(ctx, state, np.eye(3)[k]) - plain.readout_preactivation(ctx, state)
                - m.params["readout.W_c"][:, k])
        identity_err = max(identity_err, float(np.abs(diff).max()))
    elapsed = time.time() - start
    ok = acc[True] >= 0.95 and acc[False] <= 0.60 and identity_err <= 1e-6 and elapsed < 300
    verdict(4, "topic disambiguation", ok,
            f"topic-aware {acc[True]:.3f}, topic-less {acc[False]:.3f}; identity err {identity_err:.1e}; "
            f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. sub-sentence extraction


def test_05_bootstrap_oracle():
    rng = np.random.default_rng(5)
    mismatches = units = 0
    for _ in range(200):
        src, tgt, links = random_pair(rng, max_len=40)
        got = extract_spans(src, tgt, links)
        want = brute_force_spans(src, tgt, links)
        mismatches += got != want
        units += len(want)
    verdict(5, "bootstrap oracle", mismatches == 0, f"200 pairs, {units} units, {mismatches} mismatches")


# ---------------------------------------------------------------------------
# 6. alignment cost values


def test_06_alignment_costs():
    a = np.eye(2)
    alpha = np.array([[0.9, 0.1], [0.2, 0.8]])
    ce, mse = alignment_cost_ce(a, alpha), alignment_cost_mse(a, alpha)
    rng = np.random.default_rng(6)
    gibbs_ok = 0
    for _ in range(100):
        t, s = rng.integers(1, 6, size=2)
        target = rng.dirichlet(np.ones(s), size=t)
        other = rng.dirichlet(np.ones(s), size=t)
        gibbs_ok += alignment_cost_ce(target, target) <= alignment_cost_ce(target, other) + 1e-12
    ok = abs(ce - 0.16425) <= 1e-5 and abs(mse - 0.05) <= 1e-9 and gibbs_ok == 100
    verdict(6, "alignment cost values", ok, f"G_ce {ce:.6f}, G_mse {mse:.10f}, Gibbs {gibbs_ok}/100")


# ---------------------------------------------------------------------------
# 7. placeholder and OOV round trip


def test_07_placeholder_round_trip():
    sents, entries = placeholder_sentences(100, 1, 3, seed=7)
    rng = np.random.default_rng(7)
    tv = Vocabulary(list(RESERVED) + [f"w{k}" for k in range(10)])
    sv = Vocabulary(list(RESERVED) + [f"w{k}" for k in range(20)])
    restored = duplicates = leftover = copies = copy_errors = 0
    for src, recs in zip(sents, entries):
        order = rng.permutation(len(src))
        out_tokens = [src[i] if src[i] in tv.stoi else UNK for i in order]
        att = np.zeros((len(order), len(src)))
        for t, i in enumerate(order):
            if src[i] in PLACEHOLDER_CLASSES and rng.random() < 0.5:
                # point at some slot of the same class, possibly a taken one
                same = [j for j, w in enumerate(src) if w == src[i]]
                att[t, rng.choice(same)] = 1.0
            else:
                att[t, i] = 1.0
        forced = ForcedModel(tv.encode(out_tokens, add_eos=False), att, len(tv))
        res = translate([forced], src, sv, tv, beam=3, entries=recs)
        texts = [text for _, _, text in recs]
        restored += sum(res.tokens.count(text) == 1 for text in texts)
        duplicates += sum(res.tokens.count(text) > 1 for text in texts)
        leftover += sum(tok in PLACEHOLDER_CLASSES for tok in res.tokens)
        for t, i in enumerate(order):
            if out_tokens[t] == UNK:
                copies += 1
                copy_errors += res.tokens[t] != src[int(np.argmax(att[t]))]
    total = sum(len(r) for r in entries)
    ok = restored == total and duplicates == 0 and leftover == 0 and copy_errors == 0 and copies > 0
    verdict(7, "placeholder/OOV round trip", ok,
            f"{restored}/{total} placeholders restored once, {duplicates} duplicates, "
            f"{copies - copy_errors}/{copies} OOV copies")


# ---------------------------------------------------------------------------
# 8. metric oracles


def test_08_metric_oracles():
    b = bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "f"]]).bleu
    t = ter([["b", "a"]], [["a", "b"]]).ter
    rng = np.random.default_rng(8)
    bound_ok = case_ok = 0
    words = np.array(["a", "b", "c", "d", "e", "the", "The", "CAT"])
    for _ in range(1000):
        hyp = list(rng.choice(words, int(rng.integers(0, 12))))
        ref = list(rng.choice(words, int(rng.integers(1, 12))))
        score = ter([hyp], [ref]).ter
        lev = levenshtein([w.lower() for w in hyp], [w.lower() for w in ref])
        bound_ok += score <= lev / len(ref) + 1e-12
        upper = [w.upper() for w in hyp]
        case_ok += ter([upper], [ref]).ter == score and (
            not hyp or bleu([upper], [ref]).bleu == bleu([hyp], [ref]).bleu)
    ok = abs(b - 0.6687) <= 1e-4 and t == 0.5 and bound_ok == 1000 and case_ok == 1000
    verdict(8, "metric oracles", ok,
            f"BLEU {b:.5f}, TER(b a|a b) {t}, TER bound {bound_ok}/1000, case {case_ok}/1000")


# ---------------------------------------------------------------------------
# 9. domain adaptation


def test_09_domain_adaptation():
    start = time.time()
    corpus_a, corpus_b = two_domain_corpora(600, 250, seed=1)
    b_train, b_test = corpus_b[:150], corpus_b[150:]

    def enc(pairs, sv, tv):
        return encode_corpus([p.source for p in pairs], [p.target for p in pairs], sv, tv)

    sa, ta = build_vocab([p.source for p in corpus_a], 100), build_vocab([p.target for p in corpus_a], 100)
    sb, tb = build_vocab([p.source for p in b_train], 100), build_vocab([p.target for p in b_train], 100)
    mc_a = ModelConfig(len(sa), len(ta), embed_dim=32, cell_dim=32)
    base = list(train(enc(corpus_a, sa, ta), mc_a, TrainConfig(batch_size=5, max_epochs=6, seed=1), sa, ta))[-1]
    cont = TrainConfig(batch_size=5, max_epochs=4, seed=1)
    adapted = list(adapt_domain(base, enc(b_train, sb, tb), sb, tb, cont))[-1]
    mc_b = ModelConfig(len(sb), len(tb), embed_dim=32, cell_dim=32)
    scratch = list(train(enc(b_train, sb, tb), mc_b, cont, sb, tb))[-1]
    ppl = {
        "unadapted": perplexity(Model(mc_a, base.params), enc(b_test, sa, ta)),
        "adapted": perplexity(Model(adapted.model_config, adapted.params), enc(b_test, sb, tb)),
        "scratch": perplexity(Model(mc_b, scratch.params), enc(b_test, sb, tb)),
    }
    elapsed = time.time() - start
    ok = ppl["adapted"] < ppl["unadapted"] and ppl["adapted"] < ppl["scratch"] and elapsed < 300
    verdict(9, "domain adaptation", ok,
            f"held-out B perplexity unadapted {ppl['unadapted']:.1f}, adapted {ppl['adapted']:.1f}, "
            f"scratch {ppl['scratch']:.1f}; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 10. ensembles and model selection


def test_10_ensemble_and_selection(tmp_path):
    cfg = ModelConfig(30, 25, embed_dim=8, cell_dim=8)
    sv = Vocabulary(list(RESERVED) + [f"s{k}" for k in range(25)])
    tv = Vocabulary(list(RESERVED) + [f"t{k}" for k in range(20)])
    path = tmp_path / "m.bin"
    Checkpoint(init_params(cfg, seed=10, scale=0.5), cfg, sv, tv).save(path)
    members = [Checkpoint.load(path) for _ in range(2)]
    single = Model(cfg, members[0].params)
    pair = [Model(cfg, ck.params) for ck in members]
    rng = np.random.default_rng(10)
    same = 0
    for _ in range(50):
        src = [int(x) for x in rng.integers(5, 30, int(rng.integers(1, 10)))] + [0]
        one, two = beam_search([single], src, beam=5), beam_search(pair, src, beam=5)
        same += one.tokens == two.tokens and np.array_equal(one.attention_matrix, two.attention_matrix)
    fixtures = [
        ({"a": (0.30, 0.50), "b": (0.32, 0.60), "c": (0.25, 0.40)}, "c"),  # 0.80, 0.72, 0.85
        ({"a": (0.20, 0.50), "b": (0.30, 0.60)}, "a"),  # tie at 0.70: earliest wins
        ({"a": (0.10, 0.90), "b": (0.40, 0.30), "c": (0.41, 0.30)}, "c"),
    ]
    chosen = [select_model(list(scores), ["dev"], lambda c, _, s=scores: s[c])[0] == want
              for scores, want in fixtures]
    ok = same == 50 and all(chosen)
    verdict(10, "ensemble and selection", ok, f"{same}/50 identical outputs, {sum(chosen)}/{len(fixtures)} "
                                              "selection fixtures")


# ---------------------------------------------------------------------------
# 11. reproducibility


def test_11_reproducibility():
    pairs, links = monotone_corpus(60, vocab=12, min_len=4, max_len=8, seed=11)
    sv = build_vocab([p.source for p in pairs], 50)
    tv = build_vocab([p.target for p in pairs], 50)
    ex = encode_corpus([p.source for p in pairs], [p.target for p in pairs], sv, tv, links)
    mc = ModelConfig(len(sv), len(tv), embed_dim=8, cell_dim=8)
    cfg = TrainConfig(batch_size=8, max_epochs=3, checkpoint_every=4, seed=11,
                      weights=LossWeights(w1=1.0, decay_factor=0.9), guided=True)
    run1 = [ck.to_bytes() for ck in train(ex, mc, cfg, sv, tv)]
    run2 = [ck.to_bytes() for ck in train(ex, mc, cfg, sv, tv)]
    middle = Checkpoint.from_bytes(run1[len(run1) // 2])
    resumed = [ck.to_bytes() for ck in train(ex, mc, cfg, sv, tv, resume=middle)]
    identical = run1 == run2
    resume_ok = resumed == run1[len(run1) // 2 + 1:]
    verdict(11, "reproducibility", identical and resume_ok,
            f"{len(run1)} checkpoints bitwise identical: {identical}; resume from #{len(run1) // 2 + 1} "
            f"matches: {resume_ok}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
