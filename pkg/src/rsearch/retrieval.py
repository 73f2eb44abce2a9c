"""Search tool: in-process BM25 over a JSON-lines corpus, or a remote retriever."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Protocol, Sequence

import httpx
from pydantic import BaseModel, ValidationError

from .protocol import OBSERVATION_CLOSE, OBSERVATION_OPEN

_WORD = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str
    score: float


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    title: str
    contents: str


class CorpusError(ValueError):
    pass


class RetrievalError(Exception):
    pass


class RetrievalNetworkError(RetrievalError):
    pass


class RetrievalStatusError(RetrievalError):
    def __init__(self, message: str, status_code: int):
        super().__init__(message)
        self.status_code = status_code


class RetrievalSchemaError(RetrievalError):
    pass


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> list[Document]: ...


def read_corpus(path: str | Path) -> Iterator[CorpusRecord]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = CorpusRecord(id=str(obj["id"]), title=str(obj.get("title", "")), contents=obj["contents"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad corpus record ({exc})") from exc
            if not isinstance(rec.contents, str) or not rec.contents:
                raise CorpusError(f"{path}:{lineno}: record {rec.id!r} has empty contents")
            yield rec


def _rank(scored: Iterable[tuple[str, float]], k: int) -> list[tuple[str, float]]:
    return sorted(scored, key=lambda p: (-p[1], p[0]))[:k]


class BM25Index:
    """Immutable Okapi BM25 index (Lucene-style idf, always positive)."""

    def __init__(self, records: Iterable[CorpusRecord], k1: float = 1.2, b: float = 0.75):
        self.k1, self.b = k1, b
        self.docs: dict[str, CorpusRecord] = {}
        self.tf: dict[str, Counter] = {}
        self.length: dict[str, int] = {}
        for rec in records:
            if rec.id in self.docs:
                raise CorpusError(f"duplicate document id {rec.id!r}")
            if not rec.contents:
                raise CorpusError(f"record {rec.id!r} has empty contents")
            terms = tokenize(rec.title + " " + rec.contents)
            self.docs[rec.id] = rec
            self.tf[rec.id] = Counter(terms)
            self.length[rec.id] = len(terms)
        if not self.docs:
            raise CorpusError("corpus is empty")
        self.df: Counter = Counter()
        for counts in self.tf.values():
            self.df.update(counts.keys())
        self.n_docs = len(self.docs)
        self.avgdl = sum(self.length.values()) / self.n_docs
        self.postings: dict[str, list[str]] = {}
        for doc_id, counts in self.tf.items():
            for term in counts:
                self.postings.setdefault(term, []).append(doc_id)

    def idf(self, term: str) -> float:
        n = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5))

    def score(self, query: str, doc_id: str) -> float:
        counts, dl = self.tf[doc_id], self.length[doc_id]
        norm = self.k1 * (1 - self.b + self.b * dl / self.avgdl)
        s = 0.0
        for term in tokenize(query):
            f = counts.get(term, 0)
            if f:
                s += self.idf(term) * f * (self.k1 + 1) / (f + norm)
        return s

    def search(self, query: str, k: int) -> list[Document]:
        if k < 1:
            raise ValueError("k must be >= 1")
        candidates = {d for t in set(tokenize(query)) for d in self.postings.get(t, ())}
        ranked = _rank(((d, self.score(query, d)) for d in candidates), k)
        return [Document(d, self.docs[d].title, self.docs[d].contents, s) for d, s in ranked]

    retrieve = search

    def to_json(self) -> dict:
        return {
            "format": "rsearch-bm25/1",
            "k1": self.k1,
            "b": self.b,
            "documents": [{"id": r.id, "title": r.title, "contents": r.contents} for r in self.docs.values()],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format") != "rsearch-bm25/1":
            raise CorpusError(f"{path}: not an index file")
        recs = (CorpusRecord(d["id"], d["title"], d["contents"]) for d in obj["documents"])
        return cls(recs, k1=obj["k1"], b=obj["b"])


def build_index(corpus: Iterable[CorpusRecord], k1: float = 1.2, b: float = 0.75) -> BM25Index:
    return BM25Index(corpus, k1=k1, b=b)


def search(index: BM25Index, query: str, k: int) -> list[Document]:
    return index.search(query, k)


class _WireDocument(BaseModel):
    id: str
    title: str
    text: str
    score: float


class _WireResponse(BaseModel):
    documents: list[_WireDocument]


class RemoteRetriever:
    """Client for ``POST {endpoint}/retrieve``."""

    def __init__(self, endpoint: str, timeout: float = 30.0, transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def retrieve(self, query: str, k: int) -> list[Document]:
        if k < 1:
            raise ValueError("k must be >= 1")
        try:
            resp = self._client.post(f"{self.endpoint}/retrieve", json={"query": query, "top_k": k})
        except httpx.HTTPError as exc:
            raise RetrievalNetworkError(f"{self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise RetrievalStatusError(f"{self.endpoint}: HTTP {resp.status_code}", resp.status_code)
        try:
            parsed = _WireResponse.model_validate_json(resp.content)
        except ValidationError as exc:
            raise RetrievalSchemaError(f"{self.endpoint}: invalid response body: {exc}") from exc
        ids = [d.id for d in parsed.documents]
        if len(set(ids)) != len(ids):
            raise RetrievalSchemaError(f"{self.endpoint}: duplicate document ids in response")
        if any(not math.isfinite(d.score) for d in parsed.documents):
            raise RetrievalSchemaError(f"{self.endpoint}: non-finite score in response")
        docs = [Document(d.id, d.title, d.text, d.score) for d in parsed.documents]
        return sorted(docs, key=lambda d: (-d.score, d.id))[:k]


def remote_retrieve(endpoint: str, query: str, k: int, transport: Optional[httpx.BaseTransport] = None) -> list[Document]:
    client = RemoteRetriever(endpoint, transport=transport)
    try:
        return client.retrieve(query, k)
    finally:
        client.close()


def _defang(text: str) -> str:
    # A literal close tag inside a document would end the block early.
    return text.replace(OBSERVATION_CLOSE, "</observation >")


def render_observation(docs: Sequence[Document]) -> str:
    body = "".join(f'(Title: "{_defang(d.title)}") {_defang(d.text)}\n' for d in docs)
    return OBSERVATION_OPEN + body + OBSERVATION_CLOSE
