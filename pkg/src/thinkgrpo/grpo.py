"""Group rollouts, group-relative advantages and the clipped GRPO objective.

Per query x with G rollouts o_i ~ pi_old:

    J(theta) = 1/G sum_i min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i) - beta * KL
    r_i      = pi_theta(o_i | x) / pi_old(o_i | x)          (sequence level)
    A_i      = (R_i - mean(R)) / std(R)                      (population std)

KL is the per-token k3 estimate on the sampled tokens, averaged over the
steps of each trajectory and then over the group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Collection, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteUpdateError
from .parsing import FallbackMatcher
from .policy import (
    PolicyParams,
    SparseGrad,
    TokenSeq,
    accumulate,
    sample_sequence,
    token_logprobs,
    weighted_logprob_gradient,
)
from .rewards import RewardBreakdown, composite_reward
from .tasks import TaskInstance, render_prompt
from .vocab import Vocabulary

_MAX_LOG_RATIO = 700.0  # exp() overflows just past 709


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 5
    clip_eps: float = 0.2
    kl_coeff: float = 0.01
    learning_rate: float = 0.3
    std_floor: float = 1e-6
    max_len: int = 12
    temperature: float = 1.0
    ratio_mode: str = "sequence"  # or "token"
    binary_tag: bool = False
    stop_tokens: tuple[str, ...] = ("</answer>",)

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if self.kl_coeff < 0:
            raise ConfigError("kl_coeff must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.std_floor <= 0:
            raise ConfigError("std_floor must be > 0")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.ratio_mode not in ("sequence", "token"):
            raise ConfigError("ratio_mode must be 'sequence' or 'token'")


@dataclass
class Trajectory:
    seq: TokenSeq
    old_logprob: float
    old_token_logprobs: np.ndarray
    reward: float
    breakdown: RewardBreakdown | None = None
    advantage: float = 0.0
    text: str = ""


@dataclass
class GroupSample:
    prompt: tuple[int, ...]
    trajectories: list[Trajectory]
    task: TaskInstance | None = None
    stage: int | None = None

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.trajectories])

    @property
    def advantages(self) -> np.ndarray:
        return np.array([t.advantage for t in self.trajectories])


def normalize_advantages(rewards: Sequence[float], std_floor: float = 1e-6) -> np.ndarray:
    """(r - mean) / std with population std; all zeros when std <= floor."""
    r = np.asarray(rewards, dtype=np.float64)
    d = r - r.mean()
    d -= d.mean()  # second centering pass removes the first pass's rounding
    std = math.sqrt(float(np.mean(d * d)))
    if not std > std_floor:
        return np.zeros_like(r)
    return d / std


def set_advantages(group: GroupSample, std_floor: float = 1e-6) -> GroupSample:
    for traj, a in zip(group.trajectories, normalize_advantages(group.rewards, std_floor)):
        traj.advantage = float(a)
    return group


Scorer = Callable[[TokenSeq], "tuple[float, RewardBreakdown | None, str]"]


def rollout_group(
    policy_old: PolicyParams,
    prompt: Sequence[int],
    score: Scorer,
    cfg: GrpoConfig,
    rng_seed: int | np.random.Generator,
    stop_ids: Collection[int] = (),
) -> GroupSample:
    """Sample G continuations from ``policy_old`` and score them."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    prompt = tuple(prompt)
    trajs = []
    for _ in range(cfg.group_size):
        seq, lp = sample_sequence(policy_old, prompt, cfg.temperature, cfg.max_len, rng, stop_ids)
        total, breakdown, text = score(seq)
        trajs.append(Trajectory(seq, lp, token_logprobs(policy_old, prompt, seq), total, breakdown, 0.0, text))
    return set_advantages(GroupSample(prompt, trajs), cfg.std_floor)


def collect_group(
    policy_old: PolicyParams,
    task: TaskInstance,
    cfg: GrpoConfig,
    rng_seed: int | np.random.Generator,
    *,
    vocab: Vocabulary,
    stage: int = 2,
    fallback: FallbackMatcher | None = None,
) -> GroupSample:
    def score(seq: TokenSeq):
        text = vocab.decode(seq.tokens)
        rb = composite_reward(stage, text, task, fallback, binary_tag=cfg.binary_tag)
        return rb.total, rb, text

    stop_ids = {vocab.id(t) for t in cfg.stop_tokens}
    group = rollout_group(policy_old, render_prompt(task, vocab), score, cfg, rng_seed, stop_ids)
    group.task = task
    group.stage = stage
    return group


def kl_penalty_gradient(
    params: PolicyParams, ref_params: PolicyParams, seq, prompt: Sequence[int]
) -> tuple[float, SparseGrad]:
    """Per-token k3 estimate of KL(pi_theta || pi_ref) on a sampled trajectory.

    k3 = rho - log(rho) - 1 with rho = pi_ref(o_t) / pi_theta(o_t), averaged
    over the steps. Its gradient w.r.t. log pi_theta(o_t) is (1 - rho) / L.
    """
    if not params.compatible(ref_params):
        raise ConfigError("params and ref_params use different context/vocabulary schemes")
    lp = token_logprobs(params, prompt, seq)
    n = len(lp)
    if n == 0:
        return 0.0, {}
    log_rho = token_logprobs(ref_params, prompt, seq) - lp
    with np.errstate(over="ignore"):
        k3 = np.maximum(np.expm1(log_rho) - log_rho, 0.0)
        weights = -np.expm1(log_rho) / n
    return float(k3.mean()), weighted_logprob_gradient(params, prompt, seq, weights)


@dataclass
class SurrogateInfo:
    objective: float = 0.0
    policy_term: float = 0.0
    kl: float = 0.0
    clipped: int = 0
    skipped: int = 0
    count: int = 0


def surrogate_gradient(
    group: GroupSample, params: PolicyParams, ref_params: PolicyParams | None, cfg: GrpoConfig
) -> tuple[float, SparseGrad, SurrogateInfo]:
    """Objective value and its ascent gradient for one group.

    A trajectory whose importance ratio is not finite is skipped (contributes
    zero) and counted in ``info.skipped``.
    """
    grad: SparseGrad = {}
    info = SurrogateInfo(count=len(group.trajectories))
    g_count = len(group.trajectories)
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    policy_sum = kl_sum = 0.0
    use_kl = ref_params is not None
    for traj in group.trajectories:
        a = traj.advantage
        lp = token_logprobs(params, group.prompt, traj.seq)
        est, kgrad = kl_penalty_gradient(params, ref_params, traj.seq, group.prompt) if use_kl else (0.0, {})
        if cfg.ratio_mode == "sequence":
            log_r = np.array([float(lp.sum()) - traj.old_logprob])
        else:
            log_r = lp - traj.old_token_logprobs
        if not (math.isfinite(est) and np.all(np.isfinite(log_r)) and np.all(log_r <= _MAX_LOG_RATIO)):
            info.skipped += 1
            continue
        if cfg.ratio_mode == "sequence":
            r = math.exp(log_r[0])
            unclipped, clipped = r * a, min(max(r, lo), hi) * a
            # clipped branch is constant in theta: no gradient through it
            if clipped < unclipped:
                info.clipped += 1
                term = clipped
            else:
                term = unclipped
                if a != 0.0:
                    accumulate(grad, weighted_logprob_gradient(params, group.prompt, traj.seq), a * r / g_count)
        else:
            term = 0.0
            n = len(lp)
            if n:
                r = np.exp(log_r)
                unclipped, clipped = r * a, np.clip(r, lo, hi) * a
                active = clipped >= unclipped
                term = float(np.minimum(unclipped, clipped).mean())
                info.clipped += int(not active.all())
                if a != 0.0:
                    w = np.where(active, a * r / n, 0.0)
                    accumulate(grad, weighted_logprob_gradient(params, group.prompt, traj.seq, w), 1.0 / g_count)
        policy_sum += term
        kl_sum += est
        if cfg.kl_coeff > 0:
            accumulate(grad, kgrad, -cfg.kl_coeff / g_count)
    info.policy_term = policy_sum / g_count
    info.kl = kl_sum / g_count
    info.objective = info.policy_term - cfg.kl_coeff * info.kl
    return info.objective, grad, info


@dataclass
class StepStats:
    objective: float
    mean_reward: float
    r_tag: float | None
    r_format: float | None
    r_accuracy: float | None
    r_len: float | None
    mean_abs_advantage: float
    clip_frac: float
    kl: float
    mean_len: float
    skipped: int
    group_format: list[float] = field(default_factory=list)


def _component_mean(groups: Sequence[GroupSample], name: str) -> float | None:
    vals = [getattr(t.breakdown, name) for g in groups for t in g.trajectories if t.breakdown is not None]
    return float(np.mean(vals)) if vals else None


def grpo_step(
    params: PolicyParams,
    groups: Sequence[GroupSample],
    ref_params: PolicyParams | None,
    cfg: GrpoConfig,
) -> tuple[PolicyParams, StepStats]:
    """One gradient-ascent step on the batch-mean objective.

    Returns fresh params; the input object is never modified. Raises
    :class:`NonFiniteUpdateError` if the update would produce NaN/Inf.
    """
    if not groups:
        raise ConfigError("grpo_step needs at least one group")
    total: SparseGrad = {}
    objective = kl = 0.0
    clipped = skipped = count = 0
    for group in groups:
        obj, grad, info = surrogate_gradient(group, params, ref_params, cfg)
        accumulate(total, grad, 1.0 / len(groups))
        objective += obj / len(groups)
        kl += info.kl / len(groups)
        clipped += info.clipped
        skipped += info.skipped
        count += info.count
    theta = params.theta.copy()
    if total and cfg.learning_rate != 0.0:
        rows = np.fromiter(total.keys(), dtype=np.int64, count=len(total))
        theta[rows] += cfg.learning_rate * np.stack(list(total.values()))
        if not np.all(np.isfinite(theta[rows])):
            raise NonFiniteUpdateError("GRPO update produced non-finite parameters; step aborted")
    trajs = [t for g in groups for t in g.trajectories]
    stats = StepStats(
        objective=objective,
        mean_reward=float(np.mean([t.reward for t in trajs])),
        r_tag=_component_mean(groups, "r_tag"),
        r_format=_component_mean(groups, "r_format"),
        r_accuracy=_component_mean(groups, "r_accuracy"),
        r_len=_component_mean(groups, "r_len"),
        mean_abs_advantage=float(np.mean([abs(t.advantage) for t in trajs])),
        clip_frac=clipped / count if count else 0.0,
        kl=kl,
        mean_len=float(np.mean([len(t.seq) for t in trajs])),
        skipped=skipped,
        group_format=[
            float(np.mean([t.breakdown.r_format for t in g.trajectories]))
            for g in groups if g.trajectories and g.trajectories[0].breakdown is not None
        ],
    )
    return params.with_theta(theta), stats
