"""Text-generation backends: a live chat-completions client and a scripted replay."""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "RSEARCH_API_KEY"
DEFAULT_EPISODE = "*"


class FinishReason(str, enum.Enum):
    STOP_SEQUENCE = "stop_sequence"
    END_OF_MESSAGE = "end_of_message"
    LENGTH_LIMIT = "length_limit"


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    question: str
    rollout: str
    stop_sequences: tuple[str, ...] = ()
    temperature: float = 1.0
    max_new_bytes: int = 4096
    episode_id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        if self.max_new_bytes < 1:
            raise ValueError("max_new_bytes must be positive")
        if not (self.temperature >= 0 and self.temperature != float("inf")):
            raise ValueError(f"invalid temperature {self.temperature!r}")

    @property
    def transcript(self) -> str:
        """Everything after the system prompt: question then rollout so far."""
        return self.question + "\n" + self.rollout


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finished_by: FinishReason


class BackendError(Exception):
    """Base class for generation failures; ``retryable`` drives the retry loop."""

    retryable = False

    def __init__(self, message: str, episode_id: str = "", retry_after: Optional[float] = None):
        super().__init__(f"[episode {episode_id}] {message}" if episode_id else message)
        self.episode_id = episode_id
        self.retry_after = retry_after


class BackendTimeout(BackendError):
    retryable = True


class BackendTransportError(BackendError):
    retryable = True


class BackendStatusError(BackendError):
    def __init__(self, message, status_code: int, **kw):
        super().__init__(message, **kw)
        self.status_code = status_code
        self.retryable = status_code >= 500


class BackendQuotaError(BackendError):
    retryable = True


class ScriptExhausted(BackendError):
    pass


class GenerationBackend(Protocol):
    family: str

    def generate(self, req: GenerationRequest) -> GenerationResult: ...


def _clip_bytes(text: str, limit: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= limit:
        return text
    return data[:limit].decode("utf-8", errors="ignore")


def apply_stop(text: str, stop_sequences: Sequence[str], max_new_bytes: int) -> GenerationResult:
    """Cut ``text`` at the earliest stop sequence (kept) and at the byte limit."""
    cut = None
    for stop in stop_sequences:
        i = text.find(stop)
        if i >= 0 and (cut is None or i + len(stop) < cut):
            cut = i + len(stop)
    if cut is not None:
        text = text[:cut]
    if len(text.encode("utf-8")) > max_new_bytes:
        return GenerationResult(_clip_bytes(text, max_new_bytes), FinishReason.LENGTH_LIMIT)
    if cut is not None:
        return GenerationResult(text, FinishReason.STOP_SEQUENCE)
    return GenerationResult(text, FinishReason.END_OF_MESSAGE)


class ScriptedBackend:
    """Replays canned continuations, one cursor per episode id.

    ``script`` maps episode id to its continuations; the ``"*"`` entry serves
    any episode without its own script. A plain list is the ``"*"`` script.
    """

    def __init__(self, script: Mapping[str, Sequence[str]] | Sequence[str], family: str = "scripted"):
        if not isinstance(script, Mapping):
            script = {DEFAULT_EPISODE: list(script)}
        if not script or not any(script.values()):
            raise ValueError("script must be nonempty")
        self.script = {k: list(v) for k, v in script.items()}
        self.family = family
        self._cursors: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self.calls = 0

    def generate(self, req: GenerationRequest) -> GenerationResult:
        key = req.episode_id if req.episode_id in self.script else DEFAULT_EPISODE
        entries = self.script.get(key, [])
        with self._lock:
            i = self._cursors[req.episode_id]
            if i >= len(entries):
                raise ScriptExhausted(f"script exhausted after {len(entries)} entries", episode_id=req.episode_id)
            self._cursors[req.episode_id] = i + 1
            self.calls += 1
        return apply_stop(entries[i], req.stop_sequences, req.max_new_bytes)

    @classmethod
    def from_jsonl(cls, path: str | Path, family: str = "scripted") -> "ScriptedBackend":
        """Load a script fixture: one ``{"episode", "step", "text"}`` object per line."""
        rows: dict[str, list[tuple[int, str]]] = defaultdict(list)
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    rows[str(obj["episode"])].append((int(obj["step"]), str(obj["text"])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad script entry ({exc})") from exc
        script = {}
        for ep, steps in rows.items():
            steps.sort()
            if len({s for s, _ in steps}) != len(steps):
                raise ValueError(f"{path}: duplicate step in episode {ep!r}")
            script[ep] = [text for _, text in steps]
        return cls(script, family=family)


@dataclass
class ChatCompletionsBackend:
    """Client for ``POST {base_url}/v1/chat/completions``.

    The rollout so far is sent as a trailing assistant message that the
    server continues. Matched stop sequences are re-attached when the server
    strips them.
    """

    base_url: str
    model: str
    family: str
    api_key: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    transport: Optional[httpx.BaseTransport] = None
    _client: httpx.Client = field(init=False, repr=False)

    def __post_init__(self):
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(
            base_url=self.base_url.rstrip("/"), headers=headers, timeout=self.timeout, transport=self.transport
        )

    def close(self):
        self._client.close()

    def _payload(self, req: GenerationRequest) -> dict:
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": req.question})
        body = {
            "model": self.model,
            "temperature": req.temperature,
            "max_tokens": req.max_new_bytes,
        }
        if req.rollout:
            messages.append({"role": "assistant", "content": req.rollout})
            body["continue_final_message"] = True
            body["add_generation_prompt"] = False
        body["messages"] = messages
        if req.stop_sequences:
            body["stop"] = list(req.stop_sequences)
        if req.seed is not None:
            body["seed"] = req.seed
        return body

    def _post_once(self, req: GenerationRequest) -> dict:
        try:
            resp = self._client.post("/v1/chat/completions", json=self._payload(req))
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"timeout: {exc}", episode_id=req.episode_id) from exc
        except httpx.TransportError as exc:
            raise BackendTransportError(f"transport failure: {exc}", episode_id=req.episode_id) from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            raise BackendQuotaError(
                "rate limited", episode_id=req.episode_id,
                retry_after=float(retry_after) if retry_after and retry_after.replace(".", "", 1).isdigit() else None,
            )
        if resp.status_code >= 400:
            raise BackendStatusError(
                f"HTTP {resp.status_code}: {resp.text[:200]}", status_code=resp.status_code, episode_id=req.episode_id
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendStatusError("response is not JSON", status_code=resp.status_code,
                                     episode_id=req.episode_id) from exc

    def generate(self, req: GenerationRequest) -> GenerationResult:
        attempt = 0
        while True:
            try:
                body = self._post_once(req)
                break
            except BackendError as exc:
                attempt += 1
                if not exc.retryable or attempt > self.max_retries:
                    raise
                delay = exc.retry_after if exc.retry_after is not None else self.backoff * 2 ** (attempt - 1)
                logger.warning("retrying generation (%s), attempt %d in %.1fs", exc, attempt, delay)
                time.sleep(delay)
        return self._normalize(body, req)

    def _normalize(self, body: dict, req: GenerationRequest) -> GenerationResult:
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason")
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendStatusError(f"malformed completion body: {exc}", status_code=200,
                                     episode_id=req.episode_id) from exc
        if finish == "stop" and not any(text.endswith(s) for s in req.stop_sequences):
            matched = choice.get("stop_reason")
            if isinstance(matched, str) and matched in req.stop_sequences:
                text += matched
            else:
                text += _stripped_stop(text, req.stop_sequences)
        result = apply_stop(text, req.stop_sequences, req.max_new_bytes)
        if finish == "length" and result.finished_by is FinishReason.END_OF_MESSAGE:
            return GenerationResult(result.text, FinishReason.LENGTH_LIMIT)
        return result


def _stripped_stop(text: str, stops: Sequence[str]) -> str:
    # A close tag whose open tag is still pending at the end of text was
    # consumed by the server.
    for stop in stops:
        if stop.startswith("</") and stop.endswith(">"):
            opener = "<" + stop[2:]
            if text.rfind(opener) > text.rfind(stop):
                return stop
    return ""
