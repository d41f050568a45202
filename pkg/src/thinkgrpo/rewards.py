"""Rule-based rewards and the stage-dependent composite.

Stage 1 (cold start):  total = accuracy + format + 0.5 * tag
Stage 2 (decisions):   total = accuracy + 0.8 * format + 0.5 * length
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .parsing import (
    FallbackMatcher,
    MatchUnavailable,
    ParsedOutput,
    TagCounts,
    count_tags,
    parse_output,
    resolve_choice,
)
from .tasks import TaskInstance, canonical_number

LENGTH_SCALE = 250.0
STAGES = (1, 2)


@dataclass(frozen=True)
class RewardBreakdown:
    stage: int
    r_tag: float
    r_format: float
    r_accuracy: float
    r_len: float
    total: float
    well_formed: bool = False
    choice: str | None = None  # resolved option id, if any


def reward_tag(counts: TagCounts, binary: bool = False) -> float:
    """Fraction of the four tags that occur exactly once (0.25 steps).

    With ``binary=True`` the score is 1.0 only when all four do.
    """
    hits = sum(c == 1 for c in counts.as_tuple())
    if binary:
        return 1.0 if hits == 4 else 0.0
    return hits / 4.0


def reward_format(text: str) -> float:
    return 1.0 if parse_output(text).well_formed else 0.0


def word_count(text: str) -> int:
    return len(text.split())


def reward_length(think_text: str | None) -> float:
    if think_text is None:
        return 0.0
    return min(word_count(think_text) / LENGTH_SCALE, 1.0)


def reward_accuracy(
    parsed: ParsedOutput,
    task: TaskInstance,
    fallback: FallbackMatcher | None = None,
    numeric: bool = False,
) -> float:
    """Binary correctness of the answer span.

    ``numeric`` compares the answer as a canonical number against the gold
    option's text (stage-1 arithmetic tasks); otherwise the answer is mapped
    to an option id through the rule cascade and ``fallback``. An unreachable
    fallback scores 0.
    """
    return _accuracy(parsed, task, fallback, numeric)[0]


def _accuracy(parsed, task, fallback, numeric) -> tuple[float, str | None]:
    if parsed.answer_text is None:
        return 0.0, None
    if numeric:
        gold = task.numeric_gold
        got = canonical_number(parsed.answer_text)
        hit = gold is not None and got is not None and got == gold
        return (1.0 if hit else 0.0), (task.gold if hit else None)
    try:
        choice = resolve_choice(parsed.answer_text, task.options, fallback)
    except MatchUnavailable:
        return 0.0, None
    return (1.0 if choice == task.gold else 0.0), choice


def composite_reward(
    stage: int,
    text: str,
    task: TaskInstance,
    fallback: FallbackMatcher | None = None,
    binary_tag: bool = False,
) -> RewardBreakdown:
    if stage not in STAGES:
        raise ConfigError(f"stage must be 1 or 2, got {stage!r}")
    parsed = parse_output(text)
    r_format = 1.0 if parsed.well_formed else 0.0
    numeric = stage == 1 and task.numeric_gold is not None
    r_acc, choice = _accuracy(parsed, task, fallback, numeric)
    if stage == 1:
        r_tag = reward_tag(count_tags(text), binary=binary_tag)
        r_len = 0.0
        total = r_acc + r_format + 0.5 * r_tag
    else:
        r_tag = 0.0
        r_len = reward_length(parsed.think_text)
        total = r_acc + 0.8 * r_format + 0.5 * r_len
    return RewardBreakdown(stage, r_tag, r_format, r_acc, r_len, total, parsed.well_formed, choice)
