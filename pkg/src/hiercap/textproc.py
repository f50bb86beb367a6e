"""Text normalization and the whitespace word-level tokenizer.

Caption text in this project is lowercase and punctuation-free except for
"." used as a sentence separator, so normalization is deliberately minimal
and tokenization is plain whitespace splitting.  The same normalization is
shared by the dataset generator, the model tokenizer, and the metrics, so
every text comparison in the repo is exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_PUNCT_RE = re.compile(r"[^a-z0-9\. ]+")

# Special token ids are fixed so checkpoints stay stable across vocab sizes.
PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"]


def normalize(text: str) -> str:
    """Lowercase, strip punctuation except '.', collapse whitespace."""
    text = text.lower()
    text = text.replace(".", " . ")
    text = _PUNCT_RE.sub(" ", text)
    return " ".join(text.split())


def tokenize(text: str) -> list[str]:
    return normalize(text).split()


@dataclass
class Tokenizer:
    """Closed word-level vocabulary built from the synthetic corpus."""

    word_to_id: dict[str, int] = field(default_factory=dict)
    id_to_word: list[str] = field(default_factory=list)

    @classmethod
    def from_corpus(cls, texts: list[str]) -> "Tokenizer":
        words = sorted({w for t in texts for w in tokenize(t) if w not in SPECIAL_TOKENS})
        id_to_word = list(SPECIAL_TOKENS) + words
        word_to_id = {w: i for i, w in enumerate(id_to_word)}
        return cls(word_to_id=word_to_id, id_to_word=id_to_word)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str, add_special: bool = True) -> list[int]:
        ids = [self.word_to_id.get(w, UNK) for w in tokenize(text)]
        if add_special:
            return [BOS] + ids + [EOS]
        return ids

    def decode(self, ids: list[int]) -> str:
        words = [
            self.id_to_word[i]
            for i in ids
            if i not in (PAD, BOS, EOS)
        ]
        return " ".join(words)

    def to_dict(self) -> dict:
        return {"id_to_word": self.id_to_word}

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        id_to_word = list(d["id_to_word"])
        return cls(word_to_id={w: i for i, w in enumerate(id_to_word)}, id_to_word=id_to_word)
