"""Think/answer structure extraction and free-form answer -> option matching."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .vocab import ANSWER_CLOSE, ANSWER_OPEN, TAGS, THINK_CLOSE, THINK_OPEN

Options = Sequence[tuple[str, str]]


@dataclass(frozen=True)
class TagCounts:
    think_open: int
    think_close: int
    answer_open: int
    answer_close: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.think_open, self.think_close, self.answer_open, self.answer_close)


@dataclass(frozen=True)
class ParsedOutput:
    well_formed: bool
    think_text: str | None
    answer_text: str | None
    raw: str


def count_tags(text: str) -> TagCounts:
    # None of the four literals can overlap another occurrence of itself,
    # so str.count gives exact occurrence counts.
    return TagCounts(*(text.count(t) for t in TAGS))


_STRUCTURE = re.compile(
    r"\s*" + re.escape(THINK_OPEN) + r"(.*)" + re.escape(THINK_CLOSE)
    + r"\s*" + re.escape(ANSWER_OPEN) + r"(.*)" + re.escape(ANSWER_CLOSE) + r"\s*",
    re.DOTALL,
)


def parse_output(text: str) -> ParsedOutput:
    """Strict whole-string match of ``<think>..</think><answer>..</answer>``.

    Only whitespace may surround or separate the two blocks, and neither
    inner span may contain any tag literal. Anything else is malformed and
    yields no spans (truncated generations included).
    """
    m = _STRUCTURE.fullmatch(text)
    if m is None:
        return ParsedOutput(False, None, None, text)
    think, answer = m.group(1), m.group(2)
    if any(t in think or t in answer for t in TAGS):
        return ParsedOutput(False, None, None, text)
    return ParsedOutput(True, think, answer, text)


# ---------------------------------------------------------------------------
# answer matching

_STRIP_CHARS = string.whitespace + string.punctuation
_LEAD_IN = re.compile(
    r"^\s*(?:(?:so|thus|therefore|hence)\s*,?\s*)?"
    r"(?:(?:the\s+)?(?:final\s+|correct\s+|best\s+)?(?:answer|choice|option)"
    r"(?:\s+is)?\s*[:\-]?\s*|i\s+(?:choose|pick|select)\s+(?:option\s+)?)?",
    re.IGNORECASE,
)
_LEADING_LETTER = re.compile(r"^(?:\(([A-Za-z])\)|([A-Z])[.)])(?=\W|$)")
_BARE_LETTER = re.compile(r"^()([A-Z])(?=\W|$)")
_STANDALONE_LETTER = re.compile(r"(?<![A-Za-z0-9])([A-Z])(?![A-Za-z0-9])")


def _words(text: str) -> list[str]:
    return [w for w in (t.strip(_STRIP_CHARS) for t in text.lower().split()) if w]


def _contains(hay: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return n > 0 and any(hay[i:i + n] == needle for i in range(len(hay) - n + 1))


def match_choice(answer_text: str, options: Options) -> str | None:
    """Map a free-form answer onto an option id; first matching rule wins.

    1. the whole answer is a single option letter (case-insensitive, after
       stripping punctuation and parentheses);
    2. it opens with ``A.``, ``(A)`` or ``A)``, possibly after a lead-in such
       as "The answer is" (after a lead-in a bare ``A`` is enough);
    3. it equals one option's full text (case-insensitive);
    4. exactly one option's text and the answer contain one another as a
       contiguous word sequence.

    Two or more distinct option letters standing alone in the answer make it
    ambiguous, and rules 2-4 are skipped.
    """
    ids = [i for i, _ in options]
    id_set = set(ids)
    bare = answer_text.strip(_STRIP_CHARS)
    if len(bare) == 1 and bare.upper() in id_set:
        return bare.upper()

    letters = {c for c in _STANDALONE_LETTER.findall(answer_text) if c in id_set}
    if len(letters) >= 2:
        return None

    tail = _LEAD_IN.sub("", answer_text, count=1).lstrip()
    m = _LEADING_LETTER.match(tail)
    if m is None and len(tail) < len(answer_text.lstrip()):
        # after an explicit lead-in ("the answer is B") a bare letter counts
        m = _BARE_LETTER.match(tail)
    if m:
        letter = (m.group(1) or m.group(2)).upper()
        if letter in id_set:
            return letter

    norm = " ".join(_words(answer_text))
    if not norm:
        return None
    for oid, text in options:
        if " ".join(_words(text)) == norm:
            return oid

    ans_words = _words(answer_text)
    hits = [
        oid for oid, text in options
        if _contains(ans_words, _words(text)) or _contains(_words(text), ans_words)
    ]
    return hits[0] if len(hits) == 1 else None


class MatchUnavailable(RuntimeError):
    """The fallback matcher could not be reached (transport failure)."""


class FallbackMatcher(Protocol):
    def match(self, answer_text: str, options: Options) -> str | None: ...


class NullMatcher:
    """Default fallback: never matches."""

    def match(self, answer_text: str, options: Options) -> str | None:
        return None


class DictMatcher:
    """Lookup-table matcher, handy as a test double."""

    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    def match(self, answer_text: str, options: Options) -> str | None:
        return self.table.get(answer_text)


class ProviderMatcher:
    """Ask a text-generation provider to pick the option.

    ``provider`` is anything exposing ``generate(prompt) -> str`` (see
    :mod:`thinkgrpo.datagen`). Any exception while calling it is re-raised as
    :class:`MatchUnavailable`.
    """

    def __init__(self, provider):
        self.provider = provider

    def match(self, answer_text: str, options: Options) -> str | None:
        listing = "\n".join(f"{i}. {t}" for i, t in options)
        prompt = (
            "Match the model answer to one of the options. Reply with the option "
            "letter only, or NONE if no option fits.\n\n"
            f"Options:\n{listing}\n\nModel answer: {answer_text}\n"
        )
        try:
            reply = self.provider.generate(prompt)
        except Exception as exc:
            raise MatchUnavailable(str(exc)) from exc
        bare = reply.strip(_STRIP_CHARS).upper()
        return bare if bare in {i for i, _ in options} else None


def resolve_choice(
    answer_text: str, options: Options, fallback: FallbackMatcher | None = None
) -> str | None:
    """Rule cascade, then the fallback; results outside ``options`` are dropped.

    Raises :class:`MatchUnavailable` if the fallback's transport fails.
    """
    hit = match_choice(answer_text, options)
    if hit is None and fallback is not None:
        hit = fallback.match(answer_text, options)
    return hit if hit in {i for i, _ in options} else None
