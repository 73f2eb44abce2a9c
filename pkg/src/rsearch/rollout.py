"""The interleaved reasoning/search rollout loop."""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .backends import BackendError, FinishReason, GenerationBackend, GenerationRequest
from .masking import LossMask, compute_loss_mask
from .protocol import (
    SEARCH_CLOSE,
    Origin,
    SegmentKind,
    Trajectory,
    detect_completed_search,
    parse_rollout,
)
from .retrieval import Document, RetrievalError, Retriever, render_observation
from .rewards import RewardBreakdown, RewardConfig, group_advantage, total_reward
from .templates import SYSTEM_TEMPLATE

logger = logging.getLogger(__name__)


class OnRetrievalError(str, enum.Enum):
    ABORT = "abort"
    EMPTY_OBSERVATION = "empty_observation"


class OnBackendError(str, enum.Enum):
    RECORD = "record"
    RAISE = "raise"


class Termination(str, enum.Enum):
    ANSWER = "answer"
    ROUND_LIMIT = "round_limit"
    BYTE_LIMIT = "byte_limit"
    BACKEND_ERROR = "backend_error"
    # Generation ended without an answer box.
    END_OF_GENERATION = "end_of_generation"


@dataclass(frozen=True)
class RolloutConfig:
    top_k: int = 3
    max_search_rounds: int = 8
    max_total_bytes: int = 32768
    samples_per_prompt: int = 5
    temperature: float = 1.0
    on_retrieval_error: OnRetrievalError = OnRetrievalError.EMPTY_OBSERVATION
    on_backend_error: OnBackendError = OnBackendError.RECORD
    workers: int = 1
    system_template: str = SYSTEM_TEMPLATE

    def __post_init__(self):
        for name in ("top_k", "max_search_rounds", "max_total_bytes", "samples_per_prompt", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class EpisodeStats:
    search_rounds: int
    valid_searches: int
    total_bytes: int
    terminated_by: Termination
    generation_calls: int = 0
    retrieval_calls: int = 0


@dataclass
class Episode:
    id: str
    question: str
    golden_answers: list[str]
    trajectory: Trajectory
    rewards: RewardBreakdown
    mask: LossMask
    stats: EpisodeStats
    record_id: str = ""
    policy_family: str = ""
    advantage: Optional[float] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        r = self.rewards
        obj = {
            "id": self.id,
            "record_id": self.record_id,
            "question": self.question,
            "golden_answers": list(self.golden_answers),
            "raw": self.trajectory.raw,
            "segments": [
                {"kind": s.kind.value, "byte_range": list(s.byte_range), "origin": s.origin.value}
                for s in self.trajectory.segments
            ],
            "rewards": {
                "answer": r.answer,
                "evidence": r.evidence,
                "format": r.format,
                "total": r.total,
                "cross_model_answer": r.cross_model_answer,
            },
            "mask": self.mask.to_json(),
            "stats": {
                "search_rounds": self.stats.search_rounds,
                "valid_searches": self.stats.valid_searches,
                "total_bytes": self.stats.total_bytes,
                "terminated_by": self.stats.terminated_by.value,
                "generation_calls": self.stats.generation_calls,
                "retrieval_calls": self.stats.retrieval_calls,
            },
            "advantage": self.advantage,
            "policy_family": self.policy_family,
        }
        if self.error is not None:
            obj["error"] = self.error
        return obj

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: dict) -> "Episode":
        """Rebuild an Episode; the trajectory is re-parsed using the stored injection spans."""
        injected = [tuple(s["byte_range"]) for s in obj["segments"] if s["origin"] == Origin.ENVIRONMENT.value]
        t = parse_rollout(obj["raw"], obj["question"], injected_spans=injected)
        r, st = obj["rewards"], obj["stats"]
        return cls(
            id=obj["id"],
            record_id=obj.get("record_id", ""),
            question=obj["question"],
            golden_answers=list(obj["golden_answers"]),
            trajectory=t,
            rewards=RewardBreakdown(r["answer"], r["evidence"], r["format"], r["total"], r.get("cross_model_answer")),
            mask=LossMask.from_json(obj["mask"]),
            stats=EpisodeStats(
                search_rounds=st["search_rounds"],
                valid_searches=st["valid_searches"],
                total_bytes=st["total_bytes"],
                terminated_by=Termination(st["terminated_by"]),
                generation_calls=st.get("generation_calls", 0),
                retrieval_calls=st.get("retrieval_calls", 0),
            ),
            advantage=obj.get("advantage"),
            policy_family=obj.get("policy_family", ""),
            error=obj.get("error"),
        )


def _nbytes(text: str) -> int:
    return len(text.encode("utf-8"))


def _cut(text: str, offset: int) -> str:
    return text.encode("utf-8")[:offset].decode("utf-8")


def run_episode(
    question: str,
    golds: Sequence[str],
    policy: GenerationBackend,
    retriever: Retriever,
    cfg: RolloutConfig = RolloutConfig(),
    reward_cfg: RewardConfig = RewardConfig(),
    cross_family: Optional[GenerationBackend] = None,
    episode_id: str = "",
    record_id: str = "",
    seed: Optional[int] = None,
) -> Episode:
    rollout = ""
    injected: list[tuple[int, int]] = []
    rounds = valid = gen_calls = ret_calls = 0
    failure: Optional[str] = None

    while True:
        size = _nbytes(rollout)
        remaining = cfg.max_total_bytes - size
        if remaining <= 0:
            terminated = Termination.BYTE_LIMIT
            break
        req = GenerationRequest(
            system_prompt=cfg.system_template,
            question=question,
            rollout=rollout,
            stop_sequences=(SEARCH_CLOSE,),
            temperature=cfg.temperature,
            max_new_bytes=remaining,
            episode_id=episode_id,
            seed=seed,
        )
        try:
            result = policy.generate(req)
        except BackendError as exc:
            if cfg.on_backend_error is OnBackendError.RAISE:
                raise
            failure = str(exc)
            terminated = Termination.BACKEND_ERROR
            break
        gen_calls += 1

        text = result.text
        hit = detect_completed_search(text)
        if hit is not None:
            text = _cut(text, hit[1])
        rollout += text

        step = parse_rollout(text, injected_spans=())
        if step.of_kind(SegmentKind.ANSWER):
            terminated = Termination.ANSWER
            break
        last = step.segments[-1] if step.segments else None
        if hit is None or last is None or last.kind is not SegmentKind.SEARCH:
            if result.finished_by is FinishReason.LENGTH_LIMIT:
                terminated = Termination.BYTE_LIMIT
            else:
                terminated = Termination.END_OF_GENERATION
            break
        if rounds >= cfg.max_search_rounds:
            terminated = Termination.ROUND_LIMIT
            break

        query = last.text.strip()
        docs: list[Document] = []
        if query:
            ret_calls += 1
            try:
                docs = retriever.retrieve(query, cfg.top_k)
            except RetrievalError as exc:
                if cfg.on_retrieval_error is OnRetrievalError.ABORT:
                    raise
                logger.warning("episode %s: retrieval failed (%s); injecting empty observation", episode_id, exc)
        block = render_observation(docs)
        start = _nbytes(rollout)
        rollout += block
        injected.append((start, start + _nbytes(block)))
        rounds += 1
        valid += bool(query and docs)

    trajectory = parse_rollout(rollout, question, injected_spans=injected)
    rewards = RewardBreakdown.zero()
    if failure is None:
        try:
            rewards = total_reward(trajectory, golds, reward_cfg, cross_family, episode_id)
        except BackendError as exc:
            if cfg.on_backend_error is OnBackendError.RAISE:
                raise
            failure = str(exc)
            terminated = Termination.BACKEND_ERROR

    return Episode(
        id=episode_id,
        record_id=record_id,
        question=question,
        golden_answers=list(golds),
        trajectory=trajectory,
        rewards=rewards,
        mask=compute_loss_mask(trajectory),
        stats=EpisodeStats(
            search_rounds=rounds,
            valid_searches=valid,
            total_bytes=_nbytes(rollout),
            terminated_by=terminated,
            generation_calls=gen_calls,
            retrieval_calls=ret_calls,
        ),
        policy_family=getattr(policy, "family", ""),
        error=failure,
    )


def run_group(
    question: str,
    golds: Sequence[str],
    policy: GenerationBackend,
    retriever: Retriever,
    cfg: RolloutConfig = RolloutConfig(),
    reward_cfg: RewardConfig = RewardConfig(),
    cross_family: Optional[GenerationBackend] = None,
    group_id: str = "",
    seed: Optional[int] = None,
) -> tuple[list[Episode], list[float]]:
    """Sample ``samples_per_prompt`` episodes for one prompt and attach group advantages."""

    def one(i: int) -> Episode:
        return run_episode(
            question, golds, policy, retriever, cfg, reward_cfg, cross_family,
            episode_id=f"{group_id}/{i}", record_id=group_id,
            seed=None if seed is None else seed + i,
        )

    n = cfg.samples_per_prompt
    if cfg.workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.workers, n)) as pool:
            episodes = list(pool.map(one, range(n)))
    else:
        episodes = [one(i) for i in range(n)]
    advantages = group_advantage([e.rewards.total for e in episodes], reward_cfg)
    for ep, adv in zip(episodes, advantages):
        ep.advantage = adv
    return episodes, advantages
