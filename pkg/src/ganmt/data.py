"""Corpus preprocessing, vocabularies, alignments and topic vectors."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EOS = "</s>"
UNK = "<unk>"
PLACEHOLDER_CLASSES = ("$num", "$url", "$spec")
RESERVED = (EOS, UNK) + PLACEHOLDER_CLASSES

# Pattern order matters: the first rule matching at a position wins.
DEFAULT_RULES = (
    ("$url", r"(?:https?://|www\.)\S+"),
    ("$spec", r"(?<!\w)\.\d+[A-Za-z]+\w*"),
    ("$num", r"(?<!\w)(?:\d[\w.,/]*\w|\d)"),
)

PUNCTUATION = frozenset(". , ; : — - ! ? ( ) \" '".split())

_PUNCT_SPLIT = re.compile(r"([.,;:!?()\"'—]|(?<!\w)-|-(?!\w))")


class FormatError(ValueError):
    """Malformed input file (alignments, topics, rules, sidecars)."""


@dataclass
class SentencePair:
    source: list
    target: list
    line_id: int = 0


# ---------------------------------------------------------------------------
# tokenization and placeholders


@dataclass
class PlaceholderRules:
    rules: list = field(default_factory=lambda: list(DEFAULT_RULES))

    def __post_init__(self):
        for cls, pattern in self.rules:
            if cls not in PLACEHOLDER_CLASSES:
                raise FormatError(f"unknown placeholder class {cls!r}")
            try:
                re.compile(pattern)
            except re.error as exc:
                raise FormatError(f"bad pattern for {cls}: {exc}") from None
        alternation = "|".join(f"(?P<g{k}>{p})" for k, (_, p) in enumerate(self.rules))
        self._regex = re.compile(alternation) if self.rules else None

    def finditer(self, text: str):
        if self._regex is None:
            return
        for m in self._regex.finditer(text):
            if m.end() == m.start():
                continue
            k = int(m.lastgroup[1:])
            yield self.rules[k][0], m.start(), m.end()

    @classmethod
    def from_file(cls, path) -> "PlaceholderRules":
        """Rule file: ``class<TAB>pattern`` per line; ``#`` starts a comment line."""
        rules = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t", 1)
                if len(parts) != 2 or not parts[1]:
                    raise FormatError(f"{path}:{n}: expected 'class<TAB>pattern'")
                rules.append((parts[0].strip(), parts[1]))
        return cls(rules)


def tokenize(text: str) -> list:
    """Whitespace split after detaching punctuation; lowercased."""
    return _PUNCT_SPLIT.sub(r" \1 ", text).lower().split()


def preprocess(raw_line: str, rules: PlaceholderRules | None = None):
    """Tokenize, lowercase and substitute placeholders.

    Returns ``(tokens, entries)`` where ``entries`` lists
    ``(class, occurrence_index, original_text)`` in source order.
    """
    rules = rules or PlaceholderRules()
    tokens, entries = [], []
    seen = Counter()
    pos = 0
    for cls, start, end in rules.finditer(raw_line):
        tokens.extend(tokenize(raw_line[pos:start]))
        tokens.append(cls)
        entries.append((cls, seen[cls], raw_line[start:end]))
        seen[cls] += 1
        pos = end
    tokens.extend(tokenize(raw_line[pos:]))
    return tokens, entries


def restore_source(tokens: Sequence[str], entries) -> list:
    """Put the original placeholder text back into a preprocessed token list."""
    slots = {(cls, idx): text for cls, idx, text in entries}
    seen = Counter()
    out = []
    for tok in tokens:
        if tok in PLACEHOLDER_CLASSES:
            out.append(slots.get((tok, seen[tok]), tok))
            seen[tok] += 1
        else:
            out.append(tok)
    return out


def sidecar_line(line_id: int, entries) -> str:
    return json.dumps(
        {"line": line_id, "ph": [{"class": c, "idx": i, "text": t} for c, i, t in entries]},
        ensure_ascii=False,
    )


def parse_sidecar_line(line: str):
    obj = json.loads(line)
    return obj["line"], [(p["class"], p["idx"], p["text"]) for p in obj["ph"]]


def read_sidecar(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                line_id, entries = parse_sidecar_line(line)
            except (ValueError, KeyError) as exc:
                raise FormatError(f"{path}:{n}: {exc}") from None
            out[line_id] = entries
    return out


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Dense token ids; reserved tokens come first and are never evicted."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    eos_id = RESERVED.index(EOS)
    unk_id = RESERVED.index(UNK)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Iterable[str], add_eos: bool = True) -> list:
        ids = [self.stoi.get(t, self.unk_id) for t in tokens]
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids: Iterable[int]) -> list:
        out = []
        for i in ids:
            if i == self.eos_id:
                break
            out.append(self.itos[i])
        return out

    def digest(self) -> str:
        return hashlib.sha256(("\n".join(self.itos) + "\n").encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


def build_vocab(sentences: Iterable[Sequence[str]], k: int) -> Vocabulary:
    """Keep the ``k`` most frequent tokens, reserved ones included.

    Frequency ties are broken lexicographically.
    """
    if k < len(RESERVED):
        raise ValueError(f"k must be at least {len(RESERVED)}")
    counts = Counter()
    n = 0
    for sent in sentences:
        counts.update(sent)
        n += 1
    if n == 0:
        raise ValueError("empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [t for t, _ in ranked[: k - len(RESERVED)]])


# ---------------------------------------------------------------------------
# alignments


def parse_pharaoh(line: str, t_len: int, s_len: int, line_no: int | None = None) -> list:
    """``"i-j"`` pairs (source i, target j) as a sorted list of (i, j)."""
    where = f"line {line_no}: " if line_no is not None else ""
    links = set()
    for tok in line.split():
        parts = tok.split("-")
        if len(parts) != 2 or not parts[0].isdigit() or not parts[1].isdigit():
            raise FormatError(f"{where}bad alignment token {tok!r}")
        i, j = int(parts[0]), int(parts[1])
        if i >= s_len or j >= t_len:
            raise FormatError(f"{where}link {tok} outside {s_len}x{t_len} (source x target)")
        links.add((i, j))
    return sorted(links)


def links_to_matrix(links, t_len: int, s_len: int) -> np.ndarray:
    """Row-normalized target x source matrix; unlinked target rows stay zero."""
    a = np.zeros((t_len, s_len))
    for i, j in links:
        a[j, i] = 1.0
    sums = a.sum(axis=1, keepdims=True)
    np.divide(a, sums, out=a, where=sums > 0)
    return a


def ingest_alignment(pharaoh_line: str, t_len: int, s_len: int, line_no: int | None = None) -> np.ndarray:
    return links_to_matrix(parse_pharaoh(pharaoh_line, t_len, s_len, line_no), t_len, s_len)


def format_pharaoh(links) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(links, key=lambda l: (l[1], l[0])))


# ---------------------------------------------------------------------------
# topics


def load_topic_vector(labels_or_weights, d: int) -> np.ndarray:
    """Topic membership vector from labels (ints) or ``d`` raw weights, L1-normalized."""
    values = list(labels_or_weights)
    if values and all(isinstance(v, (int, np.integer)) for v in values):
        vec = np.zeros(d)
        for lab in values:
            if not 0 <= lab < d:
                raise ValueError(f"topic label {lab} outside [0, {d})")
            vec[lab] = 1.0
    else:
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (d,):
            raise ValueError(f"expected {d} topic weights, got {vec.size}")
        if (vec < 0).any():
            raise ValueError("topic weights must be nonnegative")
    total = vec.sum()
    if total <= 0:
        raise ValueError("topic vector is all zero")
    return vec / total


def parse_topic_line(line: str, d: int) -> np.ndarray:
    line = line.strip()
    if "\t" in line or "." in line:
        return load_topic_vector([float(x) for x in line.split("\t")], d)
    return load_topic_vector([int(x) for x in line.split(",") if x.strip()], d)


def read_topics(path, d: int) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            try:
                out.append(parse_topic_line(line, d))
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: {exc}") from None
    return out


def read_lines(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_tokenized(path) -> list:
    return [line.split() for line in read_lines(path)]
