"""Synthetic verifiable decision tasks and the scenario-record schema."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, fields
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError
from .vocab import OPTION_LETTERS, Vocabulary, normalize_ws

FAMILIES = ("max-of-numbers", "ordering", "rule-lookup")

# Fixed world table for rule-lookup; options always follow this order so the
# queried cue alone determines the gold letter.
RULES = (
    ("red", "stop"),
    ("green", "go"),
    ("yellow", "wait"),
    ("smoke", "leave"),
    ("rain", "cover"),
    ("ice", "slow"),
)
_SCENES = ("driving", "walking", "cycling", "running", "working", "shopping")
_PLACES = ("school", "market", "station", "park", "office", "bridge", "river", "road")


def canonical_number(text: str) -> Decimal | None:
    """Parse a signed integer/decimal; ``None`` if ``text`` is not one."""
    s = text.strip()
    if not s or any(c not in "+-.0123456789" for c in s):
        return None
    try:
        value = Decimal(s)
    except InvalidOperation:
        return None
    return value if value.is_finite() else None


@dataclass(frozen=True)
class TaskInstance:
    id: str
    situation: str
    question: str
    options: tuple[tuple[str, str], ...]
    gold: str

    def __post_init__(self) -> None:
        opts = tuple((str(i), str(t)) for i, t in self.options)
        object.__setattr__(self, "options", opts)
        if not 2 <= len(opts) <= len(OPTION_LETTERS):
            raise ConfigError(f"task {self.id}: need 2-6 options, got {len(opts)}")
        ids = [i for i, _ in opts]
        if ids != list(OPTION_LETTERS[: len(opts)]):
            raise ConfigError(f"task {self.id}: option ids must be consecutive from A, got {ids}")
        if self.gold not in ids:
            raise ConfigError(f"task {self.id}: gold {self.gold!r} not among options")

    @property
    def option_ids(self) -> tuple[str, ...]:
        return tuple(i for i, _ in self.options)

    def option_text(self, option_id: str) -> str:
        return dict(self.options)[option_id]

    @property
    def numeric_gold(self) -> Decimal | None:
        """Gold option text as a number, when the task is numeric."""
        return canonical_number(self.option_text(self.gold))

    def content(self) -> tuple:
        """Everything except the id; two tasks are distinct iff this differs."""
        return (self.situation, self.question, self.options, self.gold)


@dataclass(frozen=True)
class ScenarioRecord(TaskInstance):
    # Carried for provenance only; no reward ever reads it.
    rationale: str = ""

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "situation": self.situation,
            "question": self.question,
            "options": [{"id": i, "text": t} for i, t in self.options],
            "answer": self.gold,
            "rationale": self.rationale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ScenarioRecord:
        try:
            options = tuple((o["id"], o["text"]) for o in obj["options"])
            return cls(
                id=str(obj["id"]),
                situation=str(obj.get("situation", "")),
                question=str(obj["question"]),
                options=options,
                gold=str(obj["answer"]),
                rationale=str(obj.get("rationale", "") or ""),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scenario record: missing {exc}") from exc

    @classmethod
    def from_task(cls, task: TaskInstance, rationale: str = "") -> ScenarioRecord:
        kw = {f.name: getattr(task, f.name) for f in fields(TaskInstance)}
        return cls(**kw, rationale=rationale)


def _letters(n: int) -> tuple[str, ...]:
    return OPTION_LETTERS[:n]


def _max_of_numbers(rng: random.Random, difficulty: int) -> tuple[str, str, list[str], int]:
    n = min(difficulty + 2, 6)
    hi = {1: 9, 2: 99}.get(difficulty, 999)
    values = rng.sample(range(hi + 1), n)
    gold = values.index(max(values))
    return "", "which option is the largest number ?", [str(v) for v in values], gold


def _ordering(rng: random.Random, difficulty: int) -> tuple[str, str, list[str], int]:
    m = min(difficulty + 2, 5)
    n = min(difficulty + 2, 6)
    hi = 9 if difficulty <= 2 else 99
    values = rng.sample(range(hi + 1), m)
    target = tuple(sorted(values))
    perms = {target}
    while len(perms) < n:
        p = values[:]
        rng.shuffle(p)
        perms.add(tuple(p))
    ordered = sorted(perms - {target})
    rng.shuffle(ordered)
    gold = rng.randrange(n)
    ordered.insert(gold, target)
    situation = "numbers : " + " ".join(str(v) for v in values)
    question = "which option lists them from smallest to largest ?"
    return situation, question, [" ".join(str(v) for v in p) for p in ordered], gold


def _rule_lookup(rng: random.Random, difficulty: int) -> tuple[str, str, list[str], int]:
    n = min(difficulty + 2, len(RULES))
    active = list(RULES[:n])
    shown = active[:]
    rng.shuffle(shown)
    scene = f"you are {rng.choice(_SCENES)} near the {rng.choice(_PLACES)} ."
    rules = " ; ".join(f"{cue} means {act}" for cue, act in shown)
    gold = rng.randrange(n)
    cue = active[gold][0]
    # The cue is the final prompt token: short-context policies can see it.
    return f"{scene} {rules} .", f"which action fits {cue}", [a for _, a in active], gold


_GENERATORS = {
    "max-of-numbers": _max_of_numbers,
    "ordering": _ordering,
    "rule-lookup": _rule_lookup,
}


def generate_task(seed: int, family: str, difficulty: int = 1) -> TaskInstance:
    """Deterministic synthetic task whose gold is computable from the prompt."""
    if family not in _GENERATORS:
        raise ConfigError(f"unknown task family {family!r}; expected one of {FAMILIES}")
    if difficulty < 1:
        raise ConfigError(f"difficulty must be >= 1, got {difficulty}")
    rng = random.Random(f"{family}:{difficulty}:{seed}")
    situation, question, texts, gold = _GENERATORS[family](rng, difficulty)
    letters = _letters(len(texts))
    return TaskInstance(
        id=f"{family}-d{difficulty}-s{seed}",
        situation=situation,
        question=question,
        options=tuple(zip(letters, texts)),
        gold=letters[gold],
    )


def generate_tasks(family: str, difficulty: int, seeds: Iterable[int]) -> list[TaskInstance]:
    return [generate_task(s, family, difficulty) for s in seeds]


def prompt_text(task: TaskInstance) -> str:
    """Situation, then options, then the question (question last)."""
    opts = " ".join(f"{i} {t}" for i, t in task.options)
    return normalize_ws(f"{task.situation} {opts} {task.question}")


def render_prompt(task: TaskInstance, vocab: Vocabulary) -> tuple[int, ...]:
    return tuple(vocab.encode(prompt_text(task)))


def write_jsonl(path: str | Path, records: Iterable[TaskInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if not isinstance(rec, ScenarioRecord):
                rec = ScenarioRecord.from_task(rec)
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[ScenarioRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            yield ScenarioRecord.from_json(obj)


def read_jsonl(path: str | Path) -> list[ScenarioRecord]:
    return list(iter_jsonl(path))
