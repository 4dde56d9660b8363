"""Attention-based neural machine translation with guided alignment, topic-aware readout and domain adaptation."""

from .data import EOS, UNK, PlaceholderRules, SentencePair, Vocabulary, build_vocab, preprocess
from .decoding import beam_search, translate
from .evaluation import bleu, ter
from .model import Model, ModelConfig, init_params
from .training import LossWeights, TrainConfig, train

__all__ = [
    "EOS", "UNK", "PlaceholderRules", "SentencePair", "Vocabulary", "build_vocab", "preprocess",
    "beam_search", "translate", "bleu", "ter", "Model", "ModelConfig", "init_params",
    "LossWeights", "TrainConfig", "train",
]
