"""Corpus loading, shared vocabulary, and token<->id codecs.

Corpus files are UTF-8, one sentence per line, tokens separated by single
spaces. A dataset directory holds ``<style>.<split>.txt`` for style in
{pos, neg} and split in {train, dev, test}, plus optional ``<style>.ref.txt``
aligned line-by-line with the test split.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)

SPLITS = ("train", "dev", "test")

# A sentence is a plain list of token ids, specials never appear inside.
Sentence = list[int]


class CorpusError(ValueError):
    """Malformed corpus file or inconsistent dataset layout."""


class Vocab:
    """Immutable token<->id map with PAD/BOS/EOS/UNK reserved at ids 0..3."""

    def __init__(self, corpus_tokens=()):
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        for tok in corpus_tokens:
            if tok in seen:
                raise CorpusError(f"duplicate or reserved token {tok!r}")
            if not tok or tok.split() != [tok]:
                raise CorpusError(f"token {tok!r} is empty or contains whitespace")
            seen.add(tok)
            tokens.append(tok)
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, token):
        """Id of the token, UNK's id when out of vocabulary."""
        return self.index.get(token, UNK_ID)

    def token(self, i):
        if not 0 <= i < len(self.tokens):
            raise CorpusError(f"token id {i} out of range for vocab of size {len(self)}")
        return self.tokens[i]

    def encode(self, line):
        """Whitespace-tokenize a line into ids; unknown tokens become UNK."""
        return [self.id(t) for t in line.split()]

    def decode(self, sentence):
        """Space-join the tokens of a sentence of ids."""
        return " ".join(self.token(i) for i in sentence)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise CorpusError(f"{path}: vocab file must start with {' '.join(SPECIAL_TOKENS)}")
        return cls(lines[4:])


def build_vocab(files, min_freq=2, max_size=10000):
    """Vocabulary of the most frequent tokens across the given files.

    Keeps tokens seen at least min_freq times, capped at max_size entries
    including the four specials; frequency ties break by first occurrence.
    """
    if not files:
        raise ValueError("build_vocab: no input files")
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    if max_size < 4:
        raise ValueError(f"max_size must be >= 4, got {max_size}")
    counts = Counter()
    for path in files:
        for tokens in _read_token_lines(path):
            counts.update(tokens)
    # Counter preserves first-insertion order; stable sort keeps it for ties.
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])
    kept = [t for t, c in ranked if c >= min_freq and t not in SPECIAL_TOKENS]
    return Vocab(kept[: max_size - 4])


def _read_token_lines(path):
    """Yield token lists per line, reporting undecodable lines by number."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()  # trailing newline, not an empty sentence
    for lineno, line in enumerate(lines, 1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusError(f"{path}: line {lineno}: not valid UTF-8") from exc
        tokens = text.split()
        if not tokens:
            logger.warning("%s: line %d is empty, skipping", path, lineno)
            continue
        yield tokens


def load_corpus(path, vocab):
    """Encode a corpus file into sentences, one per non-empty line."""
    return [[vocab.id(t) for t in tokens] for tokens in _read_token_lines(path)]


@dataclass
class StyleCorpus:
    """One style's train/dev/test sentences plus optional test references."""

    style: str
    train: list[Sentence] = field(default_factory=list)
    dev: list[Sentence] = field(default_factory=list)
    test: list[Sentence] = field(default_factory=list)
    references: list[Sentence] | None = None

    def validate(self, vocab):
        size = len(vocab)
        for split_name in SPLITS:
            for s in getattr(self, split_name):
                if any(not 0 <= i < size for i in s):
                    raise CorpusError(f"{self.style}.{split_name}: token id out of range")
        if self.references is not None and len(self.references) != len(self.test):
            raise CorpusError(
                f"{self.style}: {len(self.references)} references for "
                f"{len(self.test)} test sentences"
            )


def corpus_paths(root, style):
    root = Path(root)
    paths = {split: root / f"{style}.{split}.txt" for split in SPLITS}
    paths["ref"] = root / f"{style}.ref.txt"
    return paths


def load_style_corpus(root, style, vocab):
    """Load ``<root>/<style>.<split>.txt`` (+ optional refs) for one style."""
    paths = corpus_paths(root, style)
    corpus = StyleCorpus(
        style=style,
        train=load_corpus(paths["train"], vocab),
        dev=load_corpus(paths["dev"], vocab),
        test=load_corpus(paths["test"], vocab),
    )
    if paths["ref"].exists():
        corpus.references = load_corpus(paths["ref"], vocab)
    corpus.validate(vocab)
    return corpus
