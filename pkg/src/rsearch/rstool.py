"""Evidence export and downstream answering from shared evidence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional

from .backends import GenerationBackend, GenerationRequest
from .protocol import extract_evidence

if TYPE_CHECKING:
    from .rollout import Episode

EVIDENCE_TEMPLATE = (
    "Answer the question based on the given passages.\n"
    "Only give me the answer and do not output any other words.\n"
    "The following are given passages: {evidence}\n"
    "Question: {query}\n"
    "Answer:"
)


@dataclass(frozen=True)
class EvidenceRecord:
    question: str
    evidence: str
    source_episode: str
    policy_family: str

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("evidence must be nonempty")


def build_evidence_prompt(question: str, evidence: str) -> str:
    # str.replace, not str.format: evidence text may contain braces.
    head, tail = EVIDENCE_TEMPLATE.split("{evidence}")
    return head + evidence + tail.replace("{query}", question)


def export_evidence(episode: "Episode", policy_family: str = "") -> Optional[EvidenceRecord]:
    evidence = extract_evidence(episode.trajectory)
    if not evidence:
        return None
    return EvidenceRecord(
        question=episode.question,
        evidence=evidence,
        source_episode=episode.id,
        policy_family=policy_family or episode.policy_family,
    )


def answer_with_evidence(
    record: EvidenceRecord,
    downstream: GenerationBackend,
    temperature: float = 0.1,
    max_new_bytes: int = 512,
) -> str:
    if not record.evidence:
        raise ValueError("evidence record has no evidence")
    req = GenerationRequest(
        system_prompt="",
        question=build_evidence_prompt(record.question, record.evidence),
        rollout="",
        temperature=temperature,
        max_new_bytes=max_new_bytes,
        episode_id=record.source_episode,
    )
    return downstream.generate(req).text


def write_evidence(records: Iterable[EvidenceRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_evidence(path: str | Path) -> list[EvidenceRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(EvidenceRecord(**{k: obj[k] for k in ("question", "evidence", "source_episode", "policy_family")}))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad evidence record ({exc})") from exc
    return out
