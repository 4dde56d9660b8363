"""Topic embeddings and the ambiguous word.

The corpus contains "x", which translates to "y1" in topic 0 and "y2" in
topic 1.  A topic-aware model, trained with alignment guidance so that it
also learns to copy the other words, picks the right sense; the script
prints its choice for both topics and the cosine distance between the two
learned topic embeddings.

    python3 demos/topic_distances.py
"""

import argparse

import numpy as np

from ganmt.data import build_vocab, load_topic_vector
from ganmt.decoding import format_distance_tsv, topic_distance_matrix, translate
from ganmt.model import Model, ModelConfig
from ganmt.synthetic import topic_corpus
from ganmt.training import LossWeights, TrainConfig, encode_corpus, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=6)
    args = ap.parse_args()

    pairs, topics, links = topic_corpus(600, seed=2)
    sv = build_vocab([p.source for p in pairs], 100)
    tv = build_vocab([p.target for p in pairs], 100)
    vecs = [load_topic_vector([k], 2) for k in topics]
    ex = encode_corpus([p.source for p in pairs], [p.target for p in pairs], sv, tv, links, vecs)
    mc = ModelConfig(len(sv), len(tv), embed_dim=32, cell_dim=32, topic_dim=2, use_topic=True)
    for ck in train(ex, mc, TrainConfig(batch_size=2, max_epochs=args.epochs, weights=LossWeights(w1=1.0), guided=True), sv, tv):
        print(f"epoch {ck.epoch}: train cost {ck.metadata['decoder_cost']:.3f}", flush=True)
    model = Model(mc, ck.params)

    sentence = ["w1", "x", "w4"]
    for k in (0, 1):
        out = translate([model], sentence, sv, tv, topic=np.eye(2)[k], beam=5)
        print(f"topic {k}: {' '.join(sentence)} -> {' '.join(out.tokens)}")
    dist = topic_distance_matrix([model.topic_embedding(k) for k in range(2)])
    print(format_distance_tsv(dist, ["topic0", "topic1"]), end="")


if __name__ == "__main__":
    main()
