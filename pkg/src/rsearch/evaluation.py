"""Batch EM/F1 evaluation over QA datasets, reported in the per-dataset + averages layout."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Iterable, Mapping, Optional, Sequence

from .protocol import extract_answer
from .rewards import best_em, best_f1

MULTI_HOP = ("hotpotqa", "2wikimqa", "musique", "bamboogle")
SINGLE_HOP = ("nq", "triviaqa", "popqa")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    golden_answers: tuple[str, ...]


@dataclass(frozen=True)
class DatasetScore:
    em: float
    f1: float
    n: int


@dataclass
class EvalReport:
    per_dataset: dict[str, DatasetScore]
    multi_hop_avg: Optional[float] = None
    single_hop_avg: Optional[float] = None
    overall_avg: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "per_dataset": {k: {"em": v.em, "f1": v.f1, "n": v.n} for k, v in self.per_dataset.items()},
            "multi_hop_avg": self.multi_hop_avg,
            "single_hop_avg": self.single_hop_avg,
            "overall_avg": self.overall_avg,
        }

    def table(self) -> str:
        lines = [f"{'dataset':<16}{'n':>6}{'EM':>8}{'F1':>8}"]
        for name, s in self.per_dataset.items():
            lines.append(f"{name:<16}{s.n:>6}{s.em:>8.1f}{s.f1:>8.1f}")
        for label, value in (
            ("multi-hop avg", self.multi_hop_avg),
            ("single-hop avg", self.single_hop_avg),
            ("overall avg", self.overall_avg),
        ):
            if value is not None:
                lines.append(f"{label:<30}{value:>8.1f}")
        return "\n".join(lines)


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    records, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "question", "golden_answers"):
                if key not in obj:
                    raise DatasetError(f"{path}:{lineno}: missing field {key!r}")
            golds = obj["golden_answers"]
            if isinstance(golds, str):
                golds = [golds]
            if not isinstance(golds, list) or not golds:
                raise DatasetError(f"{path}:{lineno}: golden_answers must be a nonempty list")
            rid = str(obj["id"])
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            records.append(DatasetRecord(rid, str(obj["question"]), tuple(str(g) for g in golds)))
    return records


def score_records(records: Sequence[DatasetRecord], answers: Mapping[str, Optional[str]]) -> DatasetScore:
    """Mean EM/F1 (x100) over records; ``answers`` maps record id to the predicted answer."""
    if not records:
        return DatasetScore(0.0, 0.0, 0)
    ems, f1s = [], []
    for rec in records:
        if rec.id not in answers:
            raise DatasetError(f"no episode for record id {rec.id!r}")
        pred = answers[rec.id]
        ems.append(best_em(pred, rec.golden_answers))
        f1s.append(best_f1(pred, rec.golden_answers))
    return DatasetScore(100.0 * fmean(ems), 100.0 * fmean(f1s), len(records))


def _avg(scores: Iterable[DatasetScore]) -> Optional[float]:
    # Per dataset, mean of EM and F1; then unweighted over datasets.
    vals = [(s.em + s.f1) / 2 for s in scores]
    return fmean(vals) if vals else None


def evaluate(
    datasets: Mapping[str, Sequence[DatasetRecord]],
    episodes: Iterable,
) -> EvalReport:
    """Score one episode per record. Episodes are matched by ``record_id`` (falling back to ``id``)."""
    answers: dict[str, Optional[str]] = {}
    for ep in episodes:
        key = ep.record_id or ep.id
        if key in answers:
            continue  # first sample of a group is the evaluated one
        answers[key] = extract_answer(ep.trajectory)
    per_dataset = {name: score_records(recs, answers) for name, recs in datasets.items()}
    multi = [s for n, s in per_dataset.items() if n.lower() in MULTI_HOP]
    single = [s for n, s in per_dataset.items() if n.lower() in SINGLE_HOP]
    return EvalReport(
        per_dataset=per_dataset,
        multi_hop_avg=_avg(multi),
        single_hop_avg=_avg(single),
        overall_avg=_avg(per_dataset.values()),
    )
