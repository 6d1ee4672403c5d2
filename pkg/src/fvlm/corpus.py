"""Text ingestion, vocabulary construction, and token encoding.

Corpus files are UTF-8 text, one sentence per line, tokens separated by
ASCII whitespace.  Encoded sentences always carry explicit boundaries:
ids[0] = <s>, ids[-1] = </s>.  Sentences are the training unit; no state
is carried across lines.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

from .errors import ValidationError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
RESERVED = (BOS, EOS, UNK)

TokenSequence = list  # list[int]; ids[0] == BOS_ID, ids[-1] == EOS_ID


@dataclass
class Vocabulary:
    """Bidirectional word<->id map with reserved boundary/unknown tokens."""

    words: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.words[:3]) != RESERVED:
            raise ValidationError(f"vocabulary must start with reserved tokens {RESERVED}")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValidationError("vocabulary contains duplicate words")

    @property
    def size(self) -> int:
        return len(self.words)

    def word_to_id(self, word: str) -> int:
        return self.index.get(word, UNK_ID)

    def id_to_word(self, idx: int) -> str:
        return self.words[idx]

    def content_hash(self) -> bytes:
        """SHA-256 over the ordered word list; identifies the vocab in checkpoints."""
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).digest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w in self.words:
                f.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            words = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        if not words:
            raise ValidationError(f"empty vocabulary file: {path}")
        return cls(words)


def build_vocab(corpus_path, max_size: int, min_count: int = 1) -> Vocabulary:
    """Count words in a corpus file and keep the most frequent ones.

    The vocabulary holds the three reserved tokens plus the most frequent
    words up to max_size total, excluding words seen fewer than min_count
    times.  Frequency ties break by first occurrence, so the result is
    deterministic for a given file.
    """
    counts: Counter = Counter()
    first_seen: dict[str, int] = {}
    n_tokens = 0
    with open(corpus_path, "r", encoding="utf-8") as f:
        for line in f:
            for tok in line.split():
                counts[tok] += 1
                if tok not in first_seen:
                    first_seen[tok] = n_tokens
                n_tokens += 1
    if n_tokens == 0:
        raise ValidationError(f"empty corpus: {corpus_path}")
    room = max(0, max_size - len(RESERVED))
    candidates = [w for w, c in counts.items() if c >= min_count and w not in RESERVED]
    candidates.sort(key=lambda w: (-counts[w], first_seen[w]))
    return Vocabulary(list(RESERVED) + candidates[:room])


def encode(vocab: Vocabulary, sentence: str) -> list[int]:
    """Whitespace-tokenize and map to ids, wrapped in <s> ... </s>; OOV -> <unk>."""
    return [BOS_ID] + [vocab.word_to_id(w) for w in sentence.split()] + [EOS_ID]


def encode_history(vocab: Vocabulary, sentence: str) -> list[int]:
    """Like encode() but without the trailing </s>; used as a generation prefix."""
    return [BOS_ID] + [vocab.word_to_id(w) for w in sentence.split()]


def decode(vocab: Vocabulary, ids: list[int]) -> list[str]:
    return [vocab.id_to_word(i) for i in ids]


def validate_sequence(ids: list[int], vocab_size: int) -> None:
    """Check the TokenSequence invariants; raises ValidationError."""
    if len(ids) < 2:
        raise ValidationError(f"token sequence too short: {ids}")
    if ids[0] != BOS_ID or ids[-1] != EOS_ID:
        raise ValidationError("token sequence must start with <s> and end with </s>")
    for i in ids[1:-1]:
        if i in (BOS_ID, EOS_ID):
            raise ValidationError("boundary token inside sequence interior")
    for i in ids:
        if not 0 <= i < vocab_size:
            raise ValidationError(f"token id {i} out of range for vocab of size {vocab_size}")


def reverse_sequence(ids: list[int]) -> list[int]:
    """Reverse the interior tokens; boundary markers stay at the ends.

    reverse([<s>, a, b, </s>]) == [<s>, b, a, </s>].  Involution: applying
    twice returns the original sequence.
    """
    if len(ids) < 2 or ids[0] != BOS_ID or ids[-1] != EOS_ID:
        raise ValidationError("reverse_sequence requires a valid <s> ... </s> sequence")
    return [BOS_ID] + ids[-2:0:-1] + [EOS_ID]


def read_corpus(path, vocab: Vocabulary) -> list[list[int]]:
    """Encode every line of a corpus file; blank lines are skipped."""
    sentences = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                sentences.append(encode(vocab, line))
    if not sentences:
        raise ValidationError(f"empty corpus: {path}")
    return sentences
