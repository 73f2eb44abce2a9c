"""Engine configuration: one YAML file, validated with pydantic.

Relative paths inside the file resolve against the file's directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .backends import ChatCompletionsBackend, GenerationBackend, ScriptedBackend
from .retrieval import BM25Index, RemoteRetriever, Retriever, build_index, read_corpus
from .rewards import RewardConfig
from .rollout import OnBackendError, OnRetrievalError, RolloutConfig
from .templates import resolve_template


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackendSpec(_Strict):
    kind: Literal["chat", "scripted"] = "chat"
    family: str
    base_url: Optional[str] = None
    model: Optional[str] = None
    script: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = Field(3, ge=0)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "chat" and not (self.base_url and self.model):
            raise ValueError("chat backend needs base_url and model")
        if self.kind == "scripted" and not self.script:
            raise ValueError("scripted backend needs script")
        return self


class RetrieverSpec(_Strict):
    corpus: Optional[str] = None
    index: Optional[str] = None
    endpoint: Optional[str] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        given = [n for n in ("corpus", "index", "endpoint") if getattr(self, n)]
        if len(given) != 1:
            raise ValueError(f"exactly one of corpus, index, endpoint must be set (got {given or 'none'})")
        return self


class RolloutSpec(_Strict):
    top_k: int = Field(3, ge=1)
    max_search_rounds: int = Field(8, ge=1)
    max_total_bytes: int = Field(32768, ge=1)
    samples_per_prompt: int = Field(5, ge=1)
    temperature: float = Field(1.0, ge=0)
    on_retrieval_error: OnRetrievalError = OnRetrievalError.EMPTY_OBSERVATION
    on_backend_error: OnBackendError = OnBackendError.RECORD
    workers: int = Field(1, ge=1)
    system_template: str = "default"


class RewardSpec(_Strict):
    gamma_e: float = Field(0.2, ge=0)
    gamma_a: float = Field(0.2, ge=0)
    group_eps: float = Field(1e-6, gt=0)
    evidence_reward: bool = True
    cross_family_temperature: float = Field(0.1, ge=0)
    cross_family_max_new_bytes: int = Field(512, ge=1)


class TrainerSpec(_Strict):
    # Recorded for downstream trainers; the engine does not use it.
    kl_beta: float = 0.001


class EngineConfig(_Strict):
    policy: Optional[BackendSpec] = None
    cross_family: Optional[BackendSpec] = None
    downstream: Optional[BackendSpec] = None
    retriever: Optional[RetrieverSpec] = None
    rollout: RolloutSpec = RolloutSpec()
    reward: RewardSpec = RewardSpec()
    trainer: TrainerSpec = TrainerSpec()
    seed: Optional[int] = None

    base_dir: Path = Field(default=Path("."), exclude=True)

    @model_validator(mode="after")
    def _families_differ(self):
        if self.policy and self.cross_family and self.policy.family == self.cross_family.family:
            raise ValueError(
                f"cross_family.family must differ from policy.family (both {self.policy.family!r})"
            )
        if self.reward.evidence_reward and self.policy and self.cross_family is None:
            raise ValueError("reward.evidence_reward is enabled but no cross_family backend is configured")
        return self

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def rollout_config(self) -> RolloutConfig:
        r = self.rollout
        template = r.system_template
        if template not in ("default", "no_evidence"):
            template = str(self.resolve(template))
        return RolloutConfig(
            top_k=r.top_k,
            max_search_rounds=r.max_search_rounds,
            max_total_bytes=r.max_total_bytes,
            samples_per_prompt=r.samples_per_prompt,
            temperature=r.temperature,
            on_retrieval_error=r.on_retrieval_error,
            on_backend_error=r.on_backend_error,
            workers=r.workers,
            system_template=resolve_template(template),
        )

    def reward_config(self) -> RewardConfig:
        return RewardConfig(**self.reward.model_dump())

    def make_backend(self, which: str) -> GenerationBackend:
        spec: Optional[BackendSpec] = getattr(self, which)
        if spec is None:
            raise ConfigError(f"{which}: not configured")
        if spec.kind == "scripted":
            return ScriptedBackend.from_jsonl(self.resolve(spec.script), family=spec.family)
        return ChatCompletionsBackend(
            base_url=spec.base_url, model=spec.model, family=spec.family,
            timeout=spec.timeout, max_retries=spec.max_retries,
        )

    def make_retriever(self) -> Retriever:
        spec = self.retriever
        if spec is None:
            raise ConfigError("retriever: not configured")
        if spec.endpoint:
            return RemoteRetriever(spec.endpoint)
        if spec.index:
            return BM25Index.load(self.resolve(spec.index))
        return build_index(read_corpus(self.resolve(spec.corpus)))


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: Optional[str | Path], overrides: Optional[dict] = None) -> EngineConfig:
    data: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded or {}
        base = path.parent
    for dotted, value in (overrides or {}).items():
        node = data
        *head, last = dotted.split(".")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    try:
        return EngineConfig.model_validate({**data, "base_dir": base})
    except ValidationError as exc:
        raise ConfigError(f"{path or 'config'}: {_format_validation(exc)}") from exc
