"""Text-scenario corpus construction: batched provider calls, schema checks,
deduplication, a keyword safety filter and a disjoint train/val split."""

from __future__ import annotations

import json
import os
import random
import re
import time
import unicodedata
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .errors import ConfigError
from .tasks import RULES, ScenarioRecord, generate_task, write_jsonl
from .vocab import OPTION_LETTERS

BATCH_SIZE = 10
KEY_SEP = "␟"
DEFAULT_BLOCKLIST = ("suicide", "bomb", "explosive", "kill", "weapon", "poison", "self-harm")

ENV_URL = "THINKGRPO_PROVIDER_URL"
ENV_KEY = "THINKGRPO_PROVIDER_KEY"
ENV_MODEL = "THINKGRPO_PROVIDER_MODEL"


class ProviderError(RuntimeError):
    """The provider could not be reached (after retries, where applicable)."""


class GenerationProvider(Protocol):
    deterministic: bool

    def generate(self, prompt: str) -> str: ...


# ---------------------------------------------------------------------------
# prompt and parsing


def build_generation_prompt(seed_examples: Sequence[ScenarioRecord], n: int = BATCH_SIZE) -> str:
    if not seed_examples:
        raise ConfigError("need at least one seed example")
    examples = "\n".join(json.dumps(r.to_json(), sort_keys=True) for r in seed_examples)
    return (
        "You write short everyday situations that call for a practical decision.\n"
        "Each item has a situation, a question about what to do, between two and six "
        "lettered options (A, B, C, ...) of which exactly one is best, the letter of "
        "that option as the answer, and a one-sentence rationale for it.\n\n"
        f"Examples, one JSON object per line:\n{examples}\n\n"
        f"Write {n} new items that differ from the examples and from each other. "
        f"Return them as a JSON list of {n} objects with the keys id, situation, "
        "question, options (a list of {\"id\", \"text\"}), answer and rationale, "
        "and nothing else.\n"
    )


@dataclass(frozen=True)
class Reject:
    index: int | None  # position in the batch; None for a whole-batch reject
    reason: str


def _first_json_list(text: str):
    dec = json.JSONDecoder()
    for m in re.finditer(r"\[", text):
        try:
            obj, _ = dec.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, list):
            return obj
    return None


def validate_record(obj, fallback_id: str = "") -> ScenarioRecord:
    """Schema check for one candidate; raises ConfigError with the reason."""
    if not isinstance(obj, dict):
        raise ConfigError("not an object")
    for key in ("situation", "question"):
        if not isinstance(obj.get(key), str) or not obj[key].strip():
            raise ConfigError(f"missing or empty {key}")
    opts = obj.get("options")
    if not isinstance(opts, list) or not 2 <= len(opts) <= len(OPTION_LETTERS):
        raise ConfigError("options must be a list of 2-6 entries")
    for o in opts:
        if not isinstance(o, dict) or not isinstance(o.get("id"), str) or not isinstance(o.get("text"), str):
            raise ConfigError("each option needs string id and text")
        if not o["text"].strip():
            raise ConfigError(f"option {o['id']} has empty text")
    if not isinstance(obj.get("answer"), str) or not obj["answer"]:
        raise ConfigError("missing answer")
    rationale = obj.get("rationale", "")
    if rationale is not None and not isinstance(rationale, str):
        raise ConfigError("rationale must be a string")
    return ScenarioRecord.from_json({**obj, "id": str(obj.get("id") or fallback_id)})


def parse_provider_output(text: str) -> tuple[list[ScenarioRecord], list[Reject]]:
    items = _first_json_list(text)
    if items is None:
        return [], [Reject(None, "no JSON list found")]
    records, rejects = [], []
    for i, obj in enumerate(items):
        try:
            records.append(validate_record(obj, fallback_id=f"candidate-{i}"))
        except ConfigError as exc:
            rejects.append(Reject(i, str(exc)))
    return records, rejects


def dedup_key(record) -> str:
    raw = f"{record.situation}{KEY_SEP}{record.question}".lower()
    kept = "".join(c for c in raw if not unicodedata.category(c).startswith("P"))
    return " ".join(kept.split())


def blocked_term(record, blocklist: Sequence[str]) -> str | None:
    text = f"{record.situation} {record.question}".lower()
    for term in blocklist:
        if re.search(r"(?<!\w)" + re.escape(term.lower()) + r"(?!\w)", text):
            return term
    return None


# ---------------------------------------------------------------------------
# providers


_PLACES = ("crossing", "tunnel", "harbor", "farm", "campsite", "library", "garage", "plaza")


class MockProvider:
    """Offline provider with deterministic output.

    ``mode="fresh"`` returns ``batch_size`` never-seen records per call;
    ``mode="repeat"`` returns the same batch every time.
    """

    deterministic = True

    def __init__(self, mode: str = "fresh", seed: int = 0, batch_size: int = BATCH_SIZE):
        if mode not in ("fresh", "repeat"):
            raise ConfigError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self.batch_size = batch_size
        self.calls = 0
        self._counter = 0

    def _record(self, n: int) -> dict:
        rng = random.Random(f"mock:{self.seed}:{n}")
        k = rng.randint(2, 4)
        rules = list(RULES[:k])
        gold = rng.randrange(k)
        cue, act = rules[gold]
        return {
            "id": f"mock-{n}",
            "situation": f"At {rng.choice(_PLACES)} number {n} you notice {cue}.",
            "question": "What is the best thing to do?",
            "options": [{"id": OPTION_LETTERS[i], "text": a} for i, (_, a) in enumerate(rules)],
            "answer": OPTION_LETTERS[gold],
            "rationale": f"{cue} means {act}.",
        }

    def generate(self, prompt: str) -> str:
        self.calls += 1
        if self.mode == "repeat":
            batch = [self._record(i) for i in range(self.batch_size)]
        else:
            batch = [self._record(self._counter + i) for i in range(self.batch_size)]
            self._counter += self.batch_size
        return "Here are the new items:\n" + json.dumps(batch, indent=1) + "\n"


class FailingProvider:
    """Always raises; useful for exercising retry and partial-corpus paths."""

    deterministic = True

    def __init__(self, exc: Exception | None = None):
        self.exc = exc or ProviderError("provider unreachable")
        self.calls = 0

    def generate(self, prompt: str) -> str:
        self.calls += 1
        raise self.exc


class HttpProvider:
    """Chat-completions style JSON endpoint over HTTP(S).

    Endpoint, key and model come from ``THINKGRPO_PROVIDER_URL``,
    ``THINKGRPO_PROVIDER_KEY`` and ``THINKGRPO_PROVIDER_MODEL``.
    """

    deterministic = False

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout: float = 60.0, temperature: float = 1.0):
        self.url = url or os.environ.get(ENV_URL)
        self.api_key = api_key or os.environ.get(ENV_KEY)
        self.model = model or os.environ.get(ENV_MODEL, "")
        if not self.url:
            raise ConfigError(f"provider endpoint not set (export {ENV_URL})")
        self.timeout = timeout
        self.temperature = temperature

    def generate(self, prompt: str) -> str:
        body = json.dumps({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
            raise ProviderError(f"provider request failed: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("unexpected provider response shape") from exc


def call_with_retries(
    provider: GenerationProvider, prompt: str, attempts: int = 3,
    base_delay: float = 1.0, sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Up to ``attempts`` tries with delays base, 2*base, ... between them."""
    last: Exception | None = None
    for i in range(attempts):
        try:
            return provider.generate(prompt)
        except Exception as exc:  # transport errors of any provider
            last = exc
            if i + 1 < attempts:
                sleep(base_delay * 2 ** i)
    raise ProviderError(f"provider failed after {attempts} attempts: {last}") from last


# ---------------------------------------------------------------------------
# corpus building


def default_seed_examples(n: int = BATCH_SIZE) -> list[ScenarioRecord]:
    out = []
    for i in range(n):
        t = generate_task(i, "rule-lookup", 2)
        cue = t.question.split()[-1]
        out.append(ScenarioRecord.from_task(t, rationale=f"the rules say what {cue} means"))
    return out


@dataclass
class BuildReport:
    status: str = "ok"  # ok | stalled | provider_error
    batches: int = 0
    candidates: int = 0
    accepted: int = 0
    duplicates: int = 0
    rejected: int = 0
    blocked: int = 0
    surplus: int = 0
    train: int = 0
    val: int = 0
    seed: int = 0
    message: str = ""
    reject_log: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Corpus:
    train: list[ScenarioRecord]
    val: list[ScenarioRecord]
    report: BuildReport


def build_corpus(
    provider: GenerationProvider,
    target_train: int,
    target_val: int,
    seed: int = 0,
    *,
    seed_examples: Sequence[ScenarioRecord] | None = None,
    out_dir: str | Path | None = None,
    stall_limit: int = 50,
    blocklist: Sequence[str] = DEFAULT_BLOCKLIST,
    attempts: int = 3,
    base_delay: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> Corpus:
    """Generate until ``target_train + target_val`` unique records are accepted.

    Stops early with ``status="stalled"`` after ``stall_limit`` consecutive
    batches without a new record, or ``"provider_error"`` once the provider
    fails after retries; the corpus gathered so far is still split and written.
    """
    if target_train < 1 or target_val < 1:
        raise ConfigError("corpus targets must be >= 1")
    rng = random.Random(f"corpus:{seed}")
    seeds = list(seed_examples) if seed_examples is not None else default_seed_examples()
    report = BuildReport(seed=seed)
    target = target_train + target_val
    keys: set[str] = set()
    kept: list[ScenarioRecord] = []
    idle = 0
    while len(kept) < target:
        shown = rng.sample(seeds, min(BATCH_SIZE, len(seeds)))
        try:
            text = call_with_retries(provider, build_generation_prompt(shown), attempts, base_delay, sleep)
        except ProviderError as exc:
            report.status, report.message = "provider_error", str(exc)
            break
        report.batches += 1
        records, rejects = parse_provider_output(text)
        report.candidates += len(records) + sum(r.index is not None for r in rejects)
        report.rejected += len(rejects)
        report.reject_log += [{"batch": report.batches, "index": r.index, "reason": r.reason} for r in rejects]
        fresh = 0
        for rec in records:
            term = blocked_term(rec, blocklist)
            if term is not None:
                report.blocked += 1
                report.reject_log.append({"batch": report.batches, "index": None, "reason": f"blocked term {term!r}"})
                continue
            key = dedup_key(rec)
            if key in keys:
                report.duplicates += 1
                continue
            if len(kept) >= target:
                report.surplus += 1
                continue
            keys.add(key)
            kept.append(rec)
            fresh += 1
        idle = 0 if fresh else idle + 1
        if idle >= stall_limit:
            report.status = "stalled"
            report.message = f"no new unique record in {stall_limit} consecutive batches"
            break
    report.accepted = len(kept)
    # Renumber in acceptance order, then split by key so the parts are disjoint.
    kept = [
        ScenarioRecord(f"scn-{i:06d}", r.situation, r.question, r.options, r.gold, r.rationale)
        for i, r in enumerate(kept)
    ]
    order = list(range(len(kept)))
    rng.shuffle(order)
    n_val = min(target_val, len(kept) // 2 if report.status != "ok" else target_val)
    val_idx = set(order[:n_val])
    train = [r for i, r in enumerate(kept) if i not in val_idx]
    val = [r for i, r in enumerate(kept) if i in val_idx]
    report.train, report.val = len(train), len(val)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "train.jsonl", train)
        write_jsonl(out / "val.jsonl", val)
        (out / "build_report.json").write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return Corpus(train, val, report)
