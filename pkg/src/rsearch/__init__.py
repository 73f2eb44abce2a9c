"""Trajectory engine for interleaved reasoning and search."""

from .protocol import (
    FormatFlags,
    Origin,
    Segment,
    SegmentKind,
    TagKind,
    Trajectory,
    detect_completed_search,
    extract_answer,
    extract_evidence,
    extract_queries,
    format_flags,
    parse_rollout,
)
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    answer_reward,
    evidence_reward,
    exact_match,
    format_reward,
    group_advantage,
    normalize_answer,
    token_f1,
    total_reward,
)
from .masking import LossMask, MaskFlag, MaskSpan, compute_loss_mask
from .retrieval import BM25Index, Document, build_index, remote_retrieve, render_observation, search
from .backends import ChatCompletionsBackend, GenerationRequest, GenerationResult, ScriptedBackend
from .rollout import Episode, RolloutConfig, run_episode, run_group
from .rstool import EvidenceRecord, answer_with_evidence, build_evidence_prompt, export_evidence

__version__ = "0.1.0"

__all__ = [
    "answer_reward",
    "answer_with_evidence",
    "BM25Index",
    "build_evidence_prompt",
    "build_index",
    "ChatCompletionsBackend",
    "compute_loss_mask",
    "detect_completed_search",
    "Document",
    "Episode",
    "evidence_reward",
    "EvidenceRecord",
    "exact_match",
    "export_evidence",
    "extract_answer",
    "extract_evidence",
    "extract_queries",
    "format_flags",
    "format_reward",
    "FormatFlags",
    "GenerationRequest",
    "GenerationResult",
    "group_advantage",
    "LossMask",
    "MaskFlag",
    "MaskSpan",
    "normalize_answer",
    "Origin",
    "parse_rollout",
    "remote_retrieve",
    "render_observation",
    "RewardBreakdown",
    "RewardConfig",
    "RolloutConfig",
    "run_episode",
    "run_group",
    "ScriptedBackend",
    "search",
    "Segment",
    "SegmentKind",
    "TagKind",
    "token_f1",
    "total_reward",
    "Trajectory",
]
