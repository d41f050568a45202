"""Two-stage curriculum: format cold start with the tag reward, then decision
training with the length reward once outputs are consistently well formed."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointError, ConfigError
from .evaluation import DecodeConfig, greedy_results
from .grpo import GrpoConfig, StepStats, collect_group, grpo_step
from .policy import PolicyParams, load_checkpoint, save_checkpoint, weighted_logprob_gradient
from .tasks import FAMILIES, TaskInstance, generate_task, read_jsonl, render_prompt
from .vocab import ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN, THINK_WORDS, Vocabulary

DYNAMICS_COLUMNS = (
    "step", "stage", "mean_reward", "r_tag", "r_format", "r_accuracy", "r_len",
    "kl", "clip_frac", "mean_len",
)
HELDOUT_COLUMNS = ("step", "stage", "accuracy", "format_rate")
GROUP_COLUMNS = ("step", "stage", "group", "r_format")
_HELDOUT_SEED_BASE = 1 << 31  # training task seeds are drawn below 2**30


@dataclass(frozen=True)
class StageConfig:
    stage_id: int
    family: str = "max-of-numbers"
    difficulty: int = 1
    corpus: str | None = None  # JSON-lines path; overrides ``family``
    max_steps: int = 400
    groups_per_step: int = 4
    window: int = 50
    threshold: float = 0.95
    grpo: GrpoConfig = field(default_factory=GrpoConfig)

    def __post_init__(self) -> None:
        if self.stage_id not in (1, 2):
            raise ConfigError(f"stage_id must be 1 or 2, got {self.stage_id!r}")
        if self.corpus is None and self.family not in FAMILIES:
            raise ConfigError(f"unknown task family {self.family!r}")
        if self.difficulty < 1:
            raise ConfigError("difficulty must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.groups_per_step < 1:
            raise ConfigError("groups_per_step must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")


@dataclass(frozen=True)
class PriorConfig:
    """Content-free format prior applied to the fresh policy.

    Stands in for starting from an instruction-following checkpoint: a few
    likelihood steps on demonstrations of the tag layout whose think span is
    either filler or a restatement of the last prompt word, and whose answer
    runs through every option. No demonstration prefers the gold option.
    """

    n_demos: int = 200
    learning_rate: float = 0.2
    echo_prob: float = 0.5
    max_filler: int = 7
    families: tuple[str, ...] = ("max-of-numbers", "rule-lookup")
    difficulty: int = 1

    def __post_init__(self) -> None:
        if self.n_demos < 0 or self.learning_rate < 0 or self.max_filler < 1:
            raise ConfigError("prior: n_demos, learning_rate must be >= 0 and max_filler >= 1")
        if not 0 <= self.echo_prob <= 1:
            raise ConfigError("prior: echo_prob must lie in [0, 1]")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"prior: bad families {bad or self.families!r}")


@dataclass(frozen=True)
class PolicyConfig:
    k: int = 3
    n_contexts: int = 4096
    backoff: bool = True


@dataclass(frozen=True)
class HeldoutConfig:
    family: str = "rule-lookup"
    difficulty: int = 1
    n_tasks: int = 100
    every: int = 10

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"heldout: unknown family {self.family!r}")
        if self.n_tasks < 0 or self.every < 1:
            raise ConfigError("heldout: n_tasks must be >= 0 and every >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    heldout: HeldoutConfig = field(default_factory=HeldoutConfig)
    stages: tuple[StageConfig, ...] = (
        StageConfig(1, "max-of-numbers", max_steps=400),
        StageConfig(2, "rule-lookup", max_steps=400),
    )

    def __post_init__(self) -> None:
        if [s.stage_id for s in self.stages] != [1, 2]:
            raise ConfigError("curriculum must be exactly [stage 1, stage 2]")


def reference_config() -> RunConfig:
    return RunConfig()


# ---------------------------------------------------------------------------
# logs


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    group_format: list[float] = field(default_factory=list)  # current stage only
    transitions: list[dict] = field(default_factory=list)
    heldout: list[dict] = field(default_factory=list)
    group_rows: list[dict] = field(default_factory=list)

    def extend(self, other: TrainingLog) -> None:
        self.rows += other.rows
        self.group_rows += other.group_rows
        self.transitions += other.transitions
        self.heldout += other.heldout

    def stage_rows(self, stage: int) -> list[dict]:
        return [r for r in self.rows if r["stage"] == stage]


def should_advance(log: TrainingLog, cfg: StageConfig) -> bool:
    """True iff the trailing ``cfg.window`` groups average r_format >= threshold."""
    if len(log.group_format) < cfg.window:
        return False
    return float(np.mean(log.group_format[-cfg.window:])) >= cfg.threshold


def _row(step: int, stage: int, st: StepStats) -> dict:
    return {
        "step": step,
        "stage": stage,
        "mean_reward": st.mean_reward,
        "r_tag": st.r_tag if stage == 1 else None,
        "r_format": st.r_format,
        "r_accuracy": st.r_accuracy,
        "r_len": st.r_len if stage == 2 else None,
        "kl": st.kl,
        "clip_frac": st.clip_frac,
        "mean_len": st.mean_len,
    }


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def csv_text(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def read_csv_rows(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# policy initialisation


def apply_format_prior(
    params: PolicyParams, vocab: Vocabulary, cfg: PriorConfig, seed: int
) -> PolicyParams:
    rng = np.random.default_rng([seed, 7919])
    filler = [w for w in THINK_WORDS if w in vocab]
    theta = params.theta.copy()
    work = params.with_theta(theta)
    done = n_prompt = 0
    while done < cfg.n_demos:
        family = cfg.families[n_prompt % len(cfg.families)]
        n_prompt += 1
        task = generate_task(int(rng.integers(1 << 30)), family, cfg.difficulty)
        prompt = render_prompt(task, vocab)
        if rng.random() < cfg.echo_prob:
            think = [vocab.tokens[prompt[-1]]]
        else:
            think = [filler[j] for j in rng.integers(len(filler), size=int(rng.integers(1, cfg.max_filler + 1)))]
        for _, text in task.options:
            if done >= cfg.n_demos:
                break
            demo = vocab.encode(" ".join([THINK_OPEN, *think, THINK_CLOSE, ANSWER_OPEN, text, ANSWER_CLOSE]))
            for row, g in weighted_logprob_gradient(work, prompt, demo).items():
                theta[row] += cfg.learning_rate * g
            done += 1
    return work


def initial_policy(cfg: RunConfig, vocab: Vocabulary) -> PolicyParams:
    p = PolicyParams.for_vocab(vocab, cfg.policy.n_contexts, cfg.policy.k, cfg.policy.backoff)
    if cfg.prior.n_demos:
        p = apply_format_prior(p, vocab, cfg.prior, cfg.seed)
    p.meta = {"stage": 0, "step": 0}
    return p


# ---------------------------------------------------------------------------
# stages


class TaskSource:
    """Synthetic tasks drawn from a seeded stream, or a corpus cycled with a
    seeded reshuffle each time it is exhausted."""

    def __init__(self, stage: StageConfig, rng: np.random.Generator):
        self.rng = rng
        self.stage = stage
        self.corpus: list[TaskInstance] | None = None
        self.order: list[int] = []
        if stage.corpus is not None:
            self.corpus = list(read_jsonl(stage.corpus))
            if not self.corpus:
                raise ConfigError(f"corpus {stage.corpus} is empty")

    def next(self) -> TaskInstance:
        if self.corpus is None:
            return generate_task(int(self.rng.integers(1 << 30)), self.stage.family, self.stage.difficulty)
        if not self.order:
            self.order = [int(i) for i in self.rng.permutation(len(self.corpus))]
        return self.corpus[self.order.pop()]


def stage_seed(seed: int, stage_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, stage_id])


def heldout_tasks(cfg: HeldoutConfig) -> list[TaskInstance]:
    return [generate_task(_HELDOUT_SEED_BASE + i, cfg.family, cfg.difficulty) for i in range(cfg.n_tasks)]


def heldout_point(policy, tasks, vocab, dcfg, step, stage) -> dict:
    results = greedy_results(policy, tasks, vocab, dcfg)
    n = max(len(results), 1)
    return {
        "step": step,
        "stage": stage,
        "accuracy": sum(r.correct for r in results) / n,
        "format_rate": sum(r.well_formed for r in results) / n,
    }


def run_stage(
    policy: PolicyParams,
    stage: StageConfig,
    rng_seed,
    *,
    vocab: Vocabulary | None = None,
    start_step: int = 0,
    on_step: Callable[[int, PolicyParams], dict | None] | None = None,
) -> tuple[PolicyParams, TrainingLog]:
    """GRPO loop for one stage.

    Stops after ``max_steps`` or, in stage 1, on the first step where the
    trailing window of group format rewards qualifies. pi_ref is the policy
    as it was on entry; pi_old is the policy before each batch.
    """
    vocab = vocab or Vocabulary.default()
    rng = np.random.default_rng(rng_seed)
    source = TaskSource(stage, rng)
    ref = policy.copy()
    log = TrainingLog()
    step = start_step
    for _ in range(stage.max_steps):
        old = policy
        groups = [
            collect_group(old, source.next(), stage.grpo, rng, vocab=vocab, stage=stage.stage_id)
            for _ in range(stage.groups_per_step)
        ]
        policy, st = grpo_step(old, groups, ref, stage.grpo)
        step += 1
        log.rows.append(_row(step, stage.stage_id, st))
        log.group_format += st.group_format
        log.group_rows += [
            {"step": step, "stage": stage.stage_id, "group": i, "r_format": v}
            for i, v in enumerate(st.group_format)
        ]
        if on_step is not None:
            point = on_step(step, policy)
            if point is not None:
                log.heldout.append(point)
        if stage.stage_id == 1 and should_advance(log, stage):
            break
    return policy, log


# ---------------------------------------------------------------------------
# full curriculum


def _check_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class TrainResult:
    policy: PolicyParams
    log: TrainingLog
    out_dir: Path
    switch_step: int | None


def train(
    cfg: RunConfig,
    out_dir: str | Path,
    *,
    resume_from: str | Path | None = None,
    vocab: Vocabulary | None = None,
) -> TrainResult:
    """Run both stages and write artifacts to ``out_dir``.

    Files: ``dynamics_stage{1,2}.csv``, ``heldout_eval.csv``,
    ``stage1.ckpt`` (boundary), ``final.ckpt`` and ``training_log.json``.
    ``resume_from`` takes a stage-boundary checkpoint and runs stage 2 only.
    """
    out = Path(out_dir)
    _check_writable(out)
    vocab = vocab or Vocabulary.default()
    s1, s2 = cfg.stages
    dcfg = DecodeConfig(s2.grpo.max_len, s2.grpo.stop_tokens)
    tasks = heldout_tasks(cfg.heldout)
    log = TrainingLog()
    stage_now = [1]

    def on_step(step: int, policy: PolicyParams) -> dict | None:
        if tasks and step % cfg.heldout.every == 0:
            return heldout_point(policy, tasks, vocab, dcfg, step, stage_now[0])
        return None

    if resume_from is None:
        policy = initial_policy(cfg, vocab)
        if tasks:
            log.heldout.append(heldout_point(policy, tasks, vocab, dcfg, 0, 1))
        policy, l1 = run_stage(policy, s1, stage_seed(cfg.seed, 1), vocab=vocab, on_step=on_step)
        log.extend(l1)
        switch = len(l1.rows)
        qualified = bool(l1.rows) and should_advance(l1, s1)
        log.transitions.append({
            "step": switch, "from_stage": 1, "to_stage": 2,
            "reason": "format_window" if qualified else "max_steps",
        })
        policy.meta = {"stage": 1, "step": switch, "reason": log.transitions[-1]["reason"]}
        save_checkpoint(out / "stage1.ckpt", policy)
        _write_text(out / "dynamics_stage1.csv", csv_text(l1.rows, DYNAMICS_COLUMNS))
    else:
        policy = load_checkpoint(resume_from, expected_digest=vocab.digest)
        if policy.meta.get("stage") != 1:
            raise CheckpointError(f"{resume_from} is not a stage-boundary checkpoint")
        switch = int(policy.meta["step"])
        log.transitions.append({
            "step": switch, "from_stage": 1, "to_stage": 2, "reason": policy.meta.get("reason", "resumed"),
        })

    stage_now = [2]
    policy, l2 = run_stage(policy, s2, stage_seed(cfg.seed, 2), vocab=vocab, start_step=switch, on_step=on_step)
    log.extend(l2)
    end_step = switch + len(l2.rows)
    if tasks and (not log.heldout or log.heldout[-1]["step"] != end_step):
        log.heldout.append(heldout_point(policy, tasks, vocab, dcfg, end_step, 2))
    policy.meta = {"stage": 2, "step": end_step}
    save_checkpoint(out / "final.ckpt", policy)
    _write_text(out / "dynamics_stage2.csv", csv_text(l2.rows, DYNAMICS_COLUMNS))
    heldout_rows = [h for h in log.heldout if resume_from is None or h["step"] > switch]
    _write_text(out / "heldout_eval.csv", csv_text(heldout_rows, HELDOUT_COLUMNS))
    _write_text(out / "format_groups.csv", csv_text(log.group_rows, GROUP_COLUMNS))
    summary = {"transitions": log.transitions, "end_step": end_step, "seed": cfg.seed}
    _write_text(out / "training_log.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return TrainResult(policy, log, out, switch)


# ---------------------------------------------------------------------------
# dynamics analysis


def format_saturation_step(group_rows: Sequence[dict], window: int = 50, threshold: float = 0.95) -> int | None:
    """First step at whose end the trailing ``window`` groups average r_format >= threshold.

    ``group_rows`` are per-group records (``step``, ``r_format``) in order,
    as written to ``format_groups.csv``; this mirrors :func:`should_advance`.
    """
    vals: list[float] = []
    for i, r in enumerate(group_rows):
        vals.append(float(r["r_format"]))
        last_of_step = i + 1 == len(group_rows) or group_rows[i + 1]["step"] != r["step"]
        if last_of_step and len(vals) >= window and float(np.mean(vals[-window:])) >= threshold:
            return int(r["step"])
    return None


def accuracy_rise_step(heldout: Sequence[dict], fraction: float = 0.8) -> int | None:
    """First step where held-out accuracy reaches ``fraction`` of its final value."""
    if not heldout:
        return None
    end = float(heldout[-1]["accuracy"])
    for h in heldout:
        if float(h["accuracy"]) >= fraction * end:
            return int(h["step"])
    return None


# ---------------------------------------------------------------------------
# configuration files


def _check_type(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    fields_ = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields_))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kw = {}
    for key, value in data.items():
        f = fields_[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        kw[key] = _check_type(value, default, f"{where}.{key}") if default is not None else value
    try:
        return cls(**kw)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


CONFIG_SCHEMA_VERSION = 1


def run_config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported value {version!r}")
    data.pop("out_dir", None)
    allowed = {"seed", "policy", "prior", "heldout", "stages"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(unknown)}")
    kw: dict = {}
    if "seed" in data:
        if isinstance(data["seed"], bool) or not isinstance(data["seed"], int):
            raise ConfigError(f"seed: expected an integer, got {data['seed']!r}")
        kw["seed"] = data["seed"]
    if "policy" in data:
        kw["policy"] = _build(PolicyConfig, data["policy"], "policy")
    if "prior" in data:
        kw["prior"] = _build(PriorConfig, data["prior"], "prior")
    if "heldout" in data:
        kw["heldout"] = _build(HeldoutConfig, data["heldout"], "heldout")
    if "stages" in data:
        stages = []
        for i, raw in enumerate(data["stages"]):
            if not isinstance(raw, dict):
                raise ConfigError(f"stages[{i}]: expected a table")
            raw = dict(raw)
            grpo = _build(GrpoConfig, raw.pop("grpo", {}), f"stages[{i}].grpo")
            stages.append(_build(StageConfig, {**raw, "grpo": grpo}, f"stages[{i}]"))
        kw["stages"] = tuple(stages)
    try:
        return RunConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"config: {exc}") from exc


def load_run_config(path: str | Path) -> tuple[RunConfig, dict]:
    """Parse a TOML run configuration; returns the config and the raw table."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: invalid TOML ({exc})") from exc
    return run_config_from_dict(raw), raw


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["schema_version"] = CONFIG_SCHEMA_VERSION
    return d
