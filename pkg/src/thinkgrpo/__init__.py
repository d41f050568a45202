"""Desk-scale GRPO training for think-then-answer decision tasks."""

__version__ = "0.1.0"

from .errors import CheckpointError, ConfigError, NonFiniteUpdateError
from .grpo import GrpoConfig, collect_group, grpo_step, normalize_advantages
from .parsing import count_tags, match_choice, parse_output, resolve_choice
from .policy import PolicyParams, load_checkpoint, sample_sequence, save_checkpoint
from .rewards import RewardBreakdown, composite_reward
from .tasks import ScenarioRecord, TaskInstance, generate_task
from .vocab import Vocabulary

__all__ = [
    "CheckpointError", "ConfigError", "NonFiniteUpdateError",
    "GrpoConfig", "collect_group", "grpo_step", "normalize_advantages",
    "count_tags", "match_choice", "parse_output", "resolve_choice",
    "PolicyParams", "load_checkpoint", "sample_sequence", "save_checkpoint",
    "RewardBreakdown", "composite_reward",
    "ScenarioRecord", "TaskInstance", "generate_task",
    "Vocabulary", "__version__",
]
