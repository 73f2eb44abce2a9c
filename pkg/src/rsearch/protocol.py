"""Tag grammar of the rollout protocol and the rollout parser.

All offsets are byte offsets into the UTF-8 encoding of the raw rollout.
Tags are ASCII, so every tag boundary is also a character boundary.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


class TagKind(str, enum.Enum):
    SEARCH = "search"
    OBSERVATION = "observation"
    EVIDENCE = "original_evidence"
    ANSWER = "answer"

    @property
    def open(self) -> bytes:
        return b"<" + self.value.encode() + b">"

    @property
    def close(self) -> bytes:
        return b"</" + self.value.encode() + b">"


class SegmentKind(str, enum.Enum):
    REASONING = "reasoning"
    SEARCH = "search"
    OBSERVATION = "observation"
    EVIDENCE = "evidence"
    ANSWER = "answer"


class Origin(str, enum.Enum):
    MODEL = "model"
    ENVIRONMENT = "environment"


_TAG_TO_SEGMENT = {
    TagKind.SEARCH: SegmentKind.SEARCH,
    TagKind.OBSERVATION: SegmentKind.OBSERVATION,
    TagKind.EVIDENCE: SegmentKind.EVIDENCE,
    TagKind.ANSWER: SegmentKind.ANSWER,
}

SEARCH_OPEN = "<search>"
SEARCH_CLOSE = "</search>"
OBSERVATION_OPEN = "<observation>"
OBSERVATION_CLOSE = "</observation>"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    text: str
    byte_range: tuple[int, int]
    origin: Origin

    @property
    def start(self) -> int:
        return self.byte_range[0]

    @property
    def end(self) -> int:
        return self.byte_range[1]


@dataclass(frozen=True)
class Trajectory:
    question: str
    raw: str
    segments: tuple[Segment, ...]

    def reassemble(self) -> str:
        data = self.raw.encode("utf-8")
        return b"".join(data[s.start:s.end] for s in self.segments).decode("utf-8")

    def of_kind(self, kind: SegmentKind) -> list[Segment]:
        return [s for s in self.segments if s.kind is kind]

    def environment_spans(self) -> list[tuple[int, int]]:
        return [s.byte_range for s in self.segments if s.origin is Origin.ENVIRONMENT]


@dataclass(frozen=True)
class FormatFlags:
    retrieval_triggered: bool
    answer_well_formed: bool
    evidence_well_formed: bool


def _open_pattern(kinds: Iterable[TagKind]) -> re.Pattern[bytes]:
    alts = b"|".join(re.escape(k.value.encode()) for k in kinds)
    return re.compile(b"<(" + alts + b")>")


_ALL_TAGS = tuple(TagKind)
_MODEL_TAGS = (TagKind.SEARCH, TagKind.EVIDENCE, TagKind.ANSWER)
_PATTERNS = {
    _ALL_TAGS: _open_pattern(_ALL_TAGS),
    _MODEL_TAGS: _open_pattern(_MODEL_TAGS),
}


def _scan(data: bytes, start: int, end: int, kinds: tuple[TagKind, ...]) -> list[tuple[Optional[TagKind], int, int]]:
    """Split data[start:end] into (kind, start, end) pieces; kind None is plain text.

    A box opens at the first recognized open tag and closes at the first
    close tag of the same kind. Content is opaque. An open tag with no
    matching close is plain text.
    """
    pattern = _PATTERNS[kinds]
    pieces: list[tuple[Optional[TagKind], int, int]] = []
    text_start = pos = start
    while pos < end:
        m = pattern.search(data, pos, end)
        if m is None:
            break
        kind = TagKind(m.group(1).decode())
        close_at = data.find(kind.close, m.end(), end)
        if close_at < 0:
            pos = m.end()
            continue
        if m.start() > text_start:
            pieces.append((None, text_start, m.start()))
        box_end = close_at + len(kind.close)
        pieces.append((kind, m.start(), box_end))
        text_start = pos = box_end
    if text_start < end:
        pieces.append((None, text_start, end))
    return pieces


def _check_spans(spans: Sequence[tuple[int, int]], size: int) -> list[tuple[int, int]]:
    out = sorted(spans)
    prev = 0
    for s, e in out:
        if not (prev <= s < e <= size):
            raise ValueError(f"invalid injected span {(s, e)} for rollout of {size} bytes")
        prev = e
    return out


def parse_rollout(
    raw: str,
    question: str = "",
    injected_spans: Optional[Sequence[tuple[int, int]]] = None,
) -> Trajectory:
    """Parse rollout text into a Trajectory. Never fails on content.

    When ``injected_spans`` is given (byte ranges the engine appended), those
    ranges are the only Environment-origin observations and ``<observation>``
    tags elsewhere are plain model text. Without it, observation boxes are
    recognized by the grammar, as when reading a stored transcript.
    """
    data = raw.encode("utf-8")
    pieces: list[tuple[Optional[TagKind], int, int]] = []
    if injected_spans is None:
        pieces = _scan(data, 0, len(data), _ALL_TAGS)
    else:
        pos = 0
        for s, e in _check_spans(injected_spans, len(data)):
            pieces.extend(_scan(data, pos, s, _MODEL_TAGS))
            pieces.append((TagKind.OBSERVATION, s, e))
            pos = e
        pieces.extend(_scan(data, pos, len(data), _MODEL_TAGS))

    pieces = _enforce_order(pieces, trusted_observations=injected_spans is not None)

    segments: list[Segment] = []
    for kind, s, e in _merge_text(pieces):
        if kind is None:
            segments.append(Segment(SegmentKind.REASONING, data[s:e].decode("utf-8"), (s, e), Origin.MODEL))
            continue
        body = data[s + len(kind.open):e - len(kind.close)].decode("utf-8")
        if kind is TagKind.OBSERVATION:
            if not (data.startswith(kind.open, s) and data.endswith(kind.close, 0, e)):
                body = data[s:e].decode("utf-8")
            origin = Origin.ENVIRONMENT
        else:
            origin = Origin.MODEL
        segments.append(Segment(_TAG_TO_SEGMENT[kind], body, (s, e), origin))
    return Trajectory(question=question, raw=raw, segments=tuple(segments))


def _enforce_order(pieces, trusted_observations: bool):
    # Observations may not precede the first search; evidence and answer
    # boxes must follow every observation. Violators become plain text.
    first_search = next((i for i, p in enumerate(pieces) if p[0] is TagKind.SEARCH), None)
    last_obs = None
    out = []
    for i, (kind, s, e) in enumerate(pieces):
        if kind is TagKind.OBSERVATION and not trusted_observations:
            if first_search is None or i < first_search:
                kind = None
        out.append((kind, s, e))
    for i, (kind, _, _) in enumerate(out):
        if kind is TagKind.OBSERVATION:
            last_obs = i
    if last_obs is not None:
        out = [
            (None, s, e) if i < last_obs and kind in (TagKind.EVIDENCE, TagKind.ANSWER) else (kind, s, e)
            for i, (kind, s, e) in enumerate(out)
        ]
    return out


def _merge_text(pieces):
    merged: list[tuple[Optional[TagKind], int, int]] = []
    for kind, s, e in pieces:
        if kind is None and merged and merged[-1][0] is None and merged[-1][2] == s:
            merged[-1] = (None, merged[-1][1], e)
        else:
            merged.append((kind, s, e))
    return merged


def detect_completed_search(generated_suffix: str) -> Optional[tuple[str, int]]:
    """Return (query, byte offset past ``</search>``) for the first complete pair."""
    data = generated_suffix.encode("utf-8")
    start = data.find(TagKind.SEARCH.open)
    if start < 0:
        return None
    body_start = start + len(TagKind.SEARCH.open)
    close_at = data.find(TagKind.SEARCH.close, body_start)
    if close_at < 0:
        return None
    return data[body_start:close_at].decode("utf-8"), close_at + len(TagKind.SEARCH.close)


def format_flags(t: Trajectory) -> FormatFlags:
    counts = {k: 0 for k in SegmentKind}
    for s in t.segments:
        counts[s.kind] += 1
    return FormatFlags(
        retrieval_triggered=counts[SegmentKind.OBSERVATION] >= 1,
        answer_well_formed=counts[SegmentKind.ANSWER] == 1,
        evidence_well_formed=counts[SegmentKind.EVIDENCE] == 1,
    )


def _unique(t: Trajectory, kind: SegmentKind) -> Optional[str]:
    found = t.of_kind(kind)
    return found[0].text if len(found) == 1 else None


def extract_answer(t: Trajectory) -> Optional[str]:
    return _unique(t, SegmentKind.ANSWER)


def extract_evidence(t: Trajectory) -> Optional[str]:
    return _unique(t, SegmentKind.EVIDENCE)


def extract_queries(t: Trajectory) -> list[str]:
    return [s.text for s in t.of_kind(SegmentKind.SEARCH)]
