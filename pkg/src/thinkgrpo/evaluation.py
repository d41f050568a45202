"""Evaluation harness: greedy accuracy, majority vote / pass@1 over k samples,
and accuracy by reasoning-length quintile."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .parsing import FallbackMatcher, MatchUnavailable, parse_output, resolve_choice
from .policy import PolicyParams, sample_sequence
from .rewards import word_count
from .tasks import TaskInstance, canonical_number, render_prompt
from .vocab import Vocabulary


def majority_vote(answers: Sequence[str | None]) -> str | None:
    """Most frequent non-None answer; ties go to the lowest option letter."""
    if not answers:
        raise ValueError("majority_vote needs at least one answer")
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(a for a, c in counts.items() if c == best)


def pass_at_1(answers: Sequence[str | None], gold: str) -> bool:
    """True iff any of the sampled answers is the gold option."""
    if not answers:
        raise ValueError("pass_at_1 needs at least one answer")
    return any(a == gold for a in answers)


@dataclass(frozen=True)
class SampleResult:
    text: str
    well_formed: bool
    choice: str | None
    correct: bool
    truncated: bool = False

    @property
    def think_words(self) -> int | None:
        parsed = parse_output(self.text)
        return word_count(parsed.think_text) if parsed.well_formed else None


@dataclass
class EvalRecord:
    task_id: str
    gold: str
    greedy: SampleResult
    samples: list[SampleResult]

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError(f"record {self.task_id}: need k >= 1 samples")

    @property
    def think_words(self) -> int | None:
        """Think-span word count of the greedy transcript; None if malformed."""
        return self.greedy.think_words

    @property
    def length(self) -> int:
        # Malformed transcripts have no think span; they are binned by the
        # word count of the whole output and always count as wrong.
        tw = self.think_words
        return tw if tw is not None else word_count(self.greedy.text)

    @property
    def correct(self) -> bool:
        return self.greedy.correct

    @property
    def majority(self) -> str | None:
        return majority_vote([s.choice for s in self.samples])

    @property
    def majority_correct(self) -> bool:
        return self.majority == self.gold

    @property
    def pass1(self) -> bool:
        return pass_at_1([s.choice for s in self.samples], self.gold)


@dataclass(frozen=True)
class LengthBin:
    index: int  # 1-based; bin 1 holds the shortest outputs
    upper: int | None  # inclusive upper boundary; None for the last bin
    count: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.count if self.count else None


def bin_boundaries(lengths: Sequence[int], bins: int = 5) -> list[int]:
    """Nearest-rank percentile cut points at 100*b/bins for b = 1..bins-1."""
    ordered = sorted(lengths)
    n = len(ordered)
    return [ordered[math.ceil(b * n / bins) - 1] for b in range(1, bins)]


def assign_bin(length: int, boundaries: Sequence[int]) -> int:
    """1-based bin index; a length equal to a boundary goes to the lower bin."""
    for i, cut in enumerate(boundaries):
        if length <= cut:
            return i + 1
    return len(boundaries) + 1


def length_bins(records: Sequence, bins: int = 5) -> tuple[list[LengthBin], bool]:
    """Per-bin accuracy over ``records`` (anything with ``length`` and ``correct``).

    Returns the bins and a flag that is True when binning is degenerate
    (some bin is empty, e.g. because many records share one length).
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if len(records) < bins:
        raise ConfigError(f"length binning needs at least {bins} records, got {len(records)}")
    cuts = bin_boundaries([r.length for r in records], bins)
    counts = [0] * bins
    hits = [0] * bins
    for r in records:
        b = assign_bin(r.length, cuts) - 1
        counts[b] += 1
        hits[b] += bool(r.correct)
    table = [
        LengthBin(i + 1, cuts[i] if i < len(cuts) else None, counts[i], hits[i])
        for i in range(bins)
    ]
    return table, any(c == 0 for c in counts)


@dataclass
class EvalReport:
    n: int
    k: int
    temperature: float
    seed: int
    greedy_accuracy: float
    majority_accuracy: float
    pass1_rate: float
    malformed: int
    unmatched: int
    truncated: int
    bins: list[LengthBin]
    degenerate_bins: bool
    records: list[EvalRecord] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "temperature": self.temperature,
            "seed": self.seed,
            "greedy_accuracy": self.greedy_accuracy,
            "majority_accuracy": self.majority_accuracy,
            "pass1_rate": self.pass1_rate,
            "malformed": self.malformed,
            "unmatched": self.unmatched,
            "truncated": self.truncated,
            "degenerate_bins": self.degenerate_bins,
            "length_bins": [dict(asdict(b), accuracy=b.accuracy) for b in self.bins],
        }

    def json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def csv_text(self) -> str:
        cuts = [b.upper for b in self.bins if b.upper is not None]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in self.records:
            w.writerow([
                r.task_id, r.gold, r.greedy.choice or "", int(r.greedy.correct),
                int(r.greedy.well_formed), int(r.greedy.truncated),
                "" if r.think_words is None else r.think_words, r.length,
                assign_bin(r.length, cuts) if self.bins else "",
                r.majority or "", int(r.majority_correct), int(r.pass1),
                sum(s.choice is None for s in r.samples),
            ])
        return buf.getvalue()

    def write(self, json_path: str | Path, csv_path: str | Path) -> None:
        Path(json_path).write_text(self.json_text(), encoding="utf-8")
        Path(csv_path).write_text(self.csv_text(), encoding="utf-8")


RECORD_COLUMNS = (
    "task_id", "gold", "greedy_choice", "greedy_correct", "well_formed", "truncated",
    "think_words", "length", "bin", "majority", "majority_correct", "pass1", "unmatched_samples",
)


def summarize(records: Sequence[EvalRecord], k: int, temperature: float, seed: int, bins: int = 5) -> EvalReport:
    if not records:
        raise ConfigError("cannot summarize an empty evaluation")
    n = len(records)
    if n >= bins:
        table, degenerate = length_bins(records, bins)
    else:
        table, degenerate = [], True
    return EvalReport(
        n=n,
        k=k,
        temperature=temperature,
        seed=seed,
        greedy_accuracy=sum(r.correct for r in records) / n,
        majority_accuracy=sum(r.majority_correct for r in records) / n,
        pass1_rate=sum(r.pass1 for r in records) / n,
        malformed=sum(not r.greedy.well_formed for r in records),
        unmatched=sum(r.greedy.well_formed and r.greedy.choice is None for r in records),
        truncated=sum(r.greedy.truncated for r in records),
        bins=table,
        degenerate_bins=degenerate,
        records=list(records),
    )


def score_text(
    text: str, task: TaskInstance, fallback: FallbackMatcher | None = None,
    numeric: bool = False, truncated: bool = False,
) -> SampleResult:
    parsed = parse_output(text)
    choice = None
    correct = False
    if parsed.well_formed:
        if numeric and task.numeric_gold is not None:
            got = canonical_number(parsed.answer_text)
            correct = got is not None and got == task.numeric_gold
            choice = task.gold if correct else None
        else:
            try:
                choice = resolve_choice(parsed.answer_text, task.options, fallback)
            except MatchUnavailable:
                choice = None
            correct = choice == task.gold
    return SampleResult(text, parsed.well_formed, choice, correct, truncated)


@dataclass(frozen=True)
class DecodeConfig:
    max_len: int = 12
    stop_tokens: tuple[str, ...] = ("</answer>",)


def _decode(policy, prompt, temperature, rng, vocab, dcfg) -> tuple[str, bool]:
    stop = {vocab.id(t) for t in dcfg.stop_tokens}
    seq, _ = sample_sequence(policy, prompt, temperature, dcfg.max_len, rng, stop)
    return vocab.decode(seq.tokens), seq.truncated


def greedy_results(
    policy: PolicyParams, tasks: Iterable[TaskInstance], vocab: Vocabulary,
    dcfg: DecodeConfig = DecodeConfig(), numeric: bool = False,
) -> list[SampleResult]:
    out = []
    for task in tasks:
        text, trunc = _decode(policy, render_prompt(task, vocab), 0.0, 0, vocab, dcfg)
        out.append(score_text(text, task, numeric=numeric, truncated=trunc))
    return out


def evaluate(
    policy: PolicyParams,
    corpus: Sequence[TaskInstance],
    k: int = 8,
    temperature: float = 0.2,
    seed: int = 0,
    *,
    vocab: Vocabulary,
    dcfg: DecodeConfig = DecodeConfig(),
    fallback: FallbackMatcher | None = None,
    bins: int = 5,
) -> EvalReport:
    """Greedy accuracy plus majority / pass@1 over ``k`` samples at ``temperature``.

    Record i draws its samples from a generator seeded with (seed, i), so the
    report does not depend on evaluation order.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if temperature < 0:
        raise ConfigError("temperature must be >= 0")
    if not corpus:
        raise ConfigError("evaluation corpus is empty")
    records = []
    for i, task in enumerate(corpus):
        prompt = render_prompt(task, vocab)
        text, trunc = _decode(policy, prompt, 0.0, 0, vocab, dcfg)
        greedy = score_text(text, task, fallback, truncated=trunc)
        rng = np.random.default_rng([seed, i])
        samples = []
        for _ in range(k):
            text, trunc = _decode(policy, prompt, temperature, rng, vocab, dcfg)
            samples.append(score_text(text, task, fallback, truncated=trunc))
        records.append(EvalRecord(task.id, task.gold, greedy, samples))
    return summarize(records, k, temperature, seed, bins)
