"""Token vocabulary and greedy longest-match (WordPiece-style) tokenization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
EOS = "<eos>"
UNK = "<unk>"
CONT = "##"  # prefix of word-continuation pieces

OPTION_LETTERS = ("A", "B", "C", "D", "E", "F")
DIGITS = tuple("0123456789")
PUNCT = (".", ",", "?", ":", ";", "!", "(", ")", "-", "'")

# Words used by the synthetic task families plus a small pool of filler
# words the policy can spend inside its think span.
TASK_WORDS = (
    "which", "option", "is", "the", "largest", "number", "numbers", "lists",
    "them", "from", "smallest", "to", "action", "fits", "means", "you", "are",
    "near", "a", "an", "and", "at", "in", "of", "on", "for", "if", "then",
    "when", "what", "should", "do", "rule", "rules", "signal",
    "red", "green", "yellow", "smoke", "rain", "ice",
    "stop", "go", "wait", "leave", "cover", "slow",
    "driving", "walking", "cycling", "running", "working", "shopping",
    "school", "market", "station", "park", "office", "bridge", "river", "road",
)
THINK_WORDS = (
    "so", "because", "think", "check", "compare", "answer", "first", "next",
    "it", "this", "that", "must", "be", "not", "yes", "no", "same", "more",
    "less", "than", "best", "choose",
)


def _default_tokens() -> list[str]:
    toks: list[str] = [EOS, UNK, *TAGS, *OPTION_LETTERS, *DIGITS]
    toks += [CONT + d for d in DIGITS]
    toks += list(PUNCT) + [CONT + p for p in PUNCT]
    for w in TASK_WORDS + THINK_WORDS:
        if w not in toks:
            toks.append(w)
    return toks


@dataclass(frozen=True)
class Vocabulary:
    """Ordered, immutable token table.

    Tokens starting with ``##`` continue the previous word (no space on
    detokenization). ``<unk>`` absorbs any word that cannot be segmented.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        toks = tuple(self.tokens)
        object.__setattr__(self, "tokens", toks)
        if len(set(toks)) != len(toks):
            raise ConfigError("vocabulary tokens must be distinct")
        if not 16 <= len(toks) <= 512:
            raise ConfigError(f"vocabulary size {len(toks)} outside [16, 512]")
        for special in (*TAGS, EOS, UNK):
            if special not in toks:
                raise ConfigError(f"vocabulary is missing special token {special!r}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(toks)})

    @classmethod
    def default(cls) -> Vocabulary:
        return cls(tuple(_default_tokens()))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index[token]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def digest(self) -> str:
        """SHA-256 over the ordered token table; checkpoints pin this."""
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def _segment(self, word: str) -> list[int] | None:
        ids: list[int] = []
        pos = 0
        while pos < len(word):
            prefix = CONT if pos else ""
            for end in range(len(word), pos, -1):
                piece = word[pos:end]
                if not pos and piece.startswith(CONT):
                    continue
                tid = self._index.get(prefix + piece)
                if tid is not None:
                    ids.append(tid)
                    pos = end
                    break
            else:
                return None
        return ids

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization of whitespace-separated words."""
        out: list[int] = []
        for word in text.split():
            ids = self._segment(word)
            if ids is None and word.lower() != word:
                ids = self._segment(word.lower())
            out.extend(ids if ids is not None else [self.unk_id])
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts: list[str] = []
        for i in ids:
            tok = self.tokens[i]
            if tok == EOS:
                continue
            if tok.startswith(CONT) and parts:
                parts[-1] += tok[len(CONT):]
            else:
                parts.append(tok)
        return " ".join(parts)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self._index[t] for t in tokens]


def normalize_ws(text: str) -> str:
    return " ".join(text.split())
