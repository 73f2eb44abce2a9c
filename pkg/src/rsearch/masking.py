"""Byte-level loss masks: retrieved text is excluded, everything the model wrote is kept."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .protocol import Origin, Trajectory


class MaskFlag(str, enum.Enum):
    OPTIMIZE = "optimize"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class MaskSpan:
    byte_range: tuple[int, int]
    flag: MaskFlag

    def __post_init__(self):
        s, e = self.byte_range
        if not 0 <= s < e:
            raise ValueError(f"empty or negative span {self.byte_range}")


@dataclass(frozen=True)
class LossMask:
    spans: tuple[MaskSpan, ...]

    def excluded(self) -> list[tuple[int, int]]:
        return [s.byte_range for s in self.spans if s.flag is MaskFlag.EXCLUDE]

    def to_json(self) -> list[dict]:
        return [{"byte_range": list(s.byte_range), "flag": s.flag.value} for s in self.spans]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "LossMask":
        return cls(tuple(MaskSpan(tuple(r["byte_range"]), MaskFlag(r["flag"])) for r in rows))


def compute_loss_mask(t: Trajectory) -> LossMask:
    """Exclude every Environment-origin byte (observation tags included); optimize the rest."""
    size = len(t.raw.encode("utf-8"))
    spans: list[MaskSpan] = []
    pos = 0

    def push(s: int, e: int, flag: MaskFlag):
        if s >= e:
            return
        if spans and spans[-1].flag is flag and spans[-1].byte_range[1] == s:
            spans[-1] = MaskSpan((spans[-1].byte_range[0], e), flag)
        else:
            spans.append(MaskSpan((s, e), flag))

    for s, e in sorted(seg.byte_range for seg in t.segments if seg.origin is Origin.ENVIRONMENT):
        push(pos, s, MaskFlag.OPTIMIZE)
        push(s, e, MaskFlag.EXCLUDE)
        pos = e
    push(pos, size, MaskFlag.OPTIMIZE)
    return LossMask(tuple(spans))
