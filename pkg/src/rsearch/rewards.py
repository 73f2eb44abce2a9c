"""Rule-based rewards, QA metrics and group-relative advantages."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

from .protocol import FormatFlags, Trajectory, extract_answer, extract_evidence, format_flags

if TYPE_CHECKING:
    from .backends import GenerationBackend

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class RewardConfig:
    gamma_e: float = 0.2
    gamma_a: float = 0.2
    group_eps: float = 1e-6
    # False reproduces the "w/o Evidence" ablation: no cross-family call, r^e = 0.
    evidence_reward: bool = True
    cross_family_temperature: float = 0.1
    cross_family_max_new_bytes: int = 512

    def __post_init__(self):
        if self.gamma_e < 0 or self.gamma_a < 0:
            raise ValueError("gamma_e and gamma_a must be non-negative")
        if not self.group_eps > 0:
            raise ValueError("group_eps must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    answer: float
    evidence: float
    format: float
    total: float
    cross_model_answer: Optional[str] = None

    @classmethod
    def zero(cls) -> "RewardBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0)


def normalize_answer(text: str) -> list[str]:
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def token_f1(pred: str, gold: str) -> float:
    p, g = normalize_answer(pred), normalize_answer(gold)
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    return 2 * overlap / (len(p) + len(g))


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def best_f1(pred: Optional[str], golds: Sequence[str]) -> float:
    if pred is None:
        return 0.0
    return max((token_f1(pred, g) for g in golds), default=0.0)


def best_em(pred: Optional[str], golds: Sequence[str]) -> int:
    if pred is None:
        return 0
    return max((exact_match(pred, g) for g in golds), default=0)


def answer_reward(t: Trajectory, golds: Sequence[str]) -> float:
    return best_f1(extract_answer(t), golds)


def evidence_reward(
    question: str,
    t: Trajectory,
    golds: Sequence[str],
    cross_family: "GenerationBackend",
    cfg: RewardConfig = RewardConfig(),
    episode_id: str = "",
) -> tuple[float, Optional[str]]:
    """Score the evidence box by letting a frozen cross-family model answer from it.

    Returns (reward, cross-model answer). No well-formed evidence box means
    reward 0 and no backend call.
    """
    from .backends import GenerationRequest
    from .rstool import build_evidence_prompt

    evidence = extract_evidence(t)
    if evidence is None:
        return 0.0, None
    req = GenerationRequest(
        system_prompt="",
        question=build_evidence_prompt(question, evidence),
        rollout="",
        stop_sequences=(),
        temperature=cfg.cross_family_temperature,
        max_new_bytes=cfg.cross_family_max_new_bytes,
        episode_id=episode_id,
    )
    reply = cross_family.generate(req).text
    return best_f1(reply, golds), reply


def format_reward(flags: FormatFlags, cfg: RewardConfig = RewardConfig()) -> float:
    s = int(flags.retrieval_triggered)
    a = int(flags.answer_well_formed)
    e = int(flags.evidence_well_formed)
    return (1 - s) * (cfg.gamma_e + cfg.gamma_a * a) + s * (cfg.gamma_e * e + cfg.gamma_a * a)


def total_reward(
    t: Trajectory,
    golds: Sequence[str],
    cfg: RewardConfig = RewardConfig(),
    cross_family: Optional["GenerationBackend"] = None,
    episode_id: str = "",
) -> RewardBreakdown:
    r_answer = answer_reward(t, golds)
    r_evidence, alpha_cf = 0.0, None
    if cfg.evidence_reward:
        if cross_family is None:
            raise ValueError("evidence reward enabled but no cross-family backend given")
        r_evidence, alpha_cf = evidence_reward(t.question, t, golds, cross_family, cfg, episode_id)
    r_format = format_reward(format_flags(t), cfg)
    return RewardBreakdown(
        answer=r_answer,
        evidence=r_evidence,
        format=r_format,
        total=r_answer + r_evidence + r_format,
        cross_model_answer=alpha_cf,
    )


def group_advantage(rewards: Sequence[float], cfg: RewardConfig = RewardConfig()) -> list[float]:
    """(r - mean) / max(population std, eps) over one prompt's sample group."""
    if not rewards:
        raise ValueError("rewards must be nonempty")
    n = len(rewards)
    mean = math.fsum(rewards) / n
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
    scale = max(std, cfg.group_eps)
    return [(r - mean) / scale for r in rewards]
