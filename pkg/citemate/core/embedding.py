"""Embedding providers, the per-case vector index and cosine ranking.

Retrieval is exhaustive and exact: every sentence of a case is scored against
the query and the whole case is returned in ranked order.
"""

import json
import threading
from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from pathlib import Path
from types import MappingProxyType
from typing import Any, ClassVar

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import httpx
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from sklearn.feature_extraction.text import HashingVectorizer

from citemate.core.config import settings
from citemate.core.corpus import CaseStudy

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

Vector = np.ndarray
SentenceKey = tuple[str, int]


class EmbeddingError(ValueError):
    """Raised for invalid vectors or dimension mismatches."""


class MissingEmbeddingError(LookupError):
    """Raised when a file-backed store has no vector for a key."""


class ProviderUnavailableError(RuntimeError):
    """Raised when an embedding endpoint cannot be reached or answers badly."""


def sentence_key(case_id: str, sentence_id: int) -> str:
    return f"{case_id}#{sentence_id}"


def as_vector(values: Sequence[float] | np.ndarray, dim: int | None = None) -> Vector:
    """Convert ``values`` to a read-only float vector, validating its shape.

    Raises:
        EmbeddingError: On NaN/Inf components or a dimension mismatch.
    """
    vec = np.array(values, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise EmbeddingError("embedding must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("embedding has NaN or Inf components")
    if dim is not None and vec.size != dim:
        raise EmbeddingError(f"dimension mismatch: expected {dim}, got {vec.size}")
    vec.setflags(write=False)
    return vec


# ----------------------------
# PROVIDERS
# ----------------------------


class EmbeddingProvider(ABC):
    """Turns text into vectors of a fixed, declared dimension."""

    scheme: ClassVar[str]
    registry: ClassVar[dict[str, type["EmbeddingProvider"]]] = {}

    def __init_subclass__(cls) -> None:
        """Register provider classes by their ``--embedding`` scheme."""
        if "scheme" in cls.__dict__:
            EmbeddingProvider.registry[cls.scheme] = cls

    @property
    @abstractmethod
    def dim(self) -> int: ...  # pragma: no cover

    @abstractmethod
    def embed_many(self, texts: Sequence[str]) -> list[Vector]: ...  # pragma: no cover

    def embed(self, text: str) -> Vector:
        return self.embed_many([text])[0]

    def embed_sentence(self, case_id: str, sentence_id: int, text: str) -> Vector:
        """Embed a note sentence. Stores keyed by sentence override this."""
        return self.embed(text)

    def close(self) -> None:
        """Release transport resources. Offline providers hold none."""

    def __enter__(self) -> Self:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    @classmethod
    def from_spec(cls, spec: str, token: str | None = None) -> "EmbeddingProvider":
        """Build a provider from ``file:<path>``, ``http(s)://...``, ``http:<url>`` or ``hash:<dim>``.

        Raises:
            ValueError: If the scheme is unknown.
        """
        scheme, _, rest = spec.partition(":")
        if scheme in ("http", "https") and rest.startswith("//"):
            return HttpEmbeddingProvider(spec, token=token)
        provider_cls = cls.registry.get(scheme)
        if provider_cls is None or not rest:
            raise ValueError(
                f"Unsupported embedding spec: {spec!r}. "
                f"Supported: {sorted(cls.registry)}"
            )
        return provider_cls.from_location(rest, token=token)

    @classmethod
    def from_location(cls, location: str, token: str | None = None) -> "EmbeddingProvider":
        raise NotImplementedError  # pragma: no cover


class EmbeddingRecord(BaseModel):
    """One line of a file-backed embedding store."""

    key: str
    vector: list[float]

    @field_validator("vector")
    @classmethod
    def validate_vector(cls, v: list[float]) -> list[float]:
        as_vector(v)
        return v


class FileEmbeddingProvider(EmbeddingProvider):
    """Deterministic lookup in a JSON-lines store.

    Keys are raw text (queries, answer sentences) or ``case_id#sentence_id``
    for note sentences.
    """

    scheme = "file"

    def __init__(self, vectors: Mapping[str, Sequence[float]]) -> None:
        if not vectors:
            raise EmbeddingError("embedding store is empty")
        first = next(iter(vectors.values()))
        self._dim = len(first)
        self._vectors = MappingProxyType(
            {key: as_vector(vec, self._dim) for key, vec in vectors.items()}
        )

    @classmethod
    def load(cls, path: str | Path) -> "FileEmbeddingProvider":
        vectors: dict[str, list[float]] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = EmbeddingRecord.model_validate(json.loads(line))
                except ValueError as e:
                    raise EmbeddingError(f"{path}:{lineno}: {e}") from e
                vectors[record.key] = record.vector
        return cls(vectors)

    @classmethod
    def from_location(cls, location: str, token: str | None = None) -> "FileEmbeddingProvider":
        return cls.load(location)

    @property
    def dim(self) -> int:
        return self._dim

    def _get(self, key: str) -> Vector:
        try:
            return self._vectors[key]
        except KeyError:
            raise MissingEmbeddingError(f"missing embedding for {key!r}") from None

    def embed_many(self, texts: Sequence[str]) -> list[Vector]:
        return [self._get(text) for text in texts]

    def embed_sentence(self, case_id: str, sentence_id: int, text: str) -> Vector:
        key = sentence_key(case_id, sentence_id)
        if key in self._vectors:
            return self._vectors[key]
        return self._get(text)


class HttpEmbeddingProvider(EmbeddingProvider):
    """Embedding endpoint: POST ``{"inputs": [...]}`` -> ``{"vectors": [[...]]}``."""

    scheme = "http"

    def __init__(
        self,
        url: str,
        token: str | None = None,
        dim: int = settings.EMBEDDING_DIM,
        client: httpx.Client | None = None,
        timeout: float = settings.HTTP_TIMEOUT,
    ) -> None:
        self.url = url
        self._dim = dim
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    @classmethod
    def from_location(cls, location: str, token: str | None = None) -> "HttpEmbeddingProvider":
        return cls(location, token=token)

    @property
    def dim(self) -> int:
        return self._dim

    def embed_many(self, texts: Sequence[str]) -> list[Vector]:
        try:
            response = self._client.post(
                self.url, json={"inputs": list(texts)}, headers=self._headers
            )
            response.raise_for_status()
            payload = response.json()
        except (httpx.HTTPError, ValueError) as e:
            raise ProviderUnavailableError(f"embedding endpoint {self.url}: {e}") from e
        vectors = payload.get("vectors") if isinstance(payload, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderUnavailableError(
                f"embedding endpoint {self.url} returned a malformed payload"
            )
        return [as_vector(v, self._dim) for v in vectors]


class HashingEmbeddingProvider(EmbeddingProvider):
    """Offline bag-of-words embedding through feature hashing."""

    scheme = "hash"

    def __init__(self, dim: int = settings.EMBEDDING_DIM) -> None:
        self._dim = dim
        self._vectorizer = HashingVectorizer(
            n_features=dim,
            alternate_sign=False,
            norm="l2",
            lowercase=True,
            token_pattern=r"(?u)\b\w+\b",
        )

    @classmethod
    def from_location(cls, location: str, token: str | None = None) -> "HashingEmbeddingProvider":
        return cls(int(location))

    @property
    def dim(self) -> int:
        return self._dim

    def embed_many(self, texts: Sequence[str]) -> list[Vector]:
        matrix = self._vectorizer.transform(list(texts)).toarray()
        return [as_vector(row) for row in matrix]


class CachedEmbeddingProvider(EmbeddingProvider):
    """Thread-safe memoization in front of another provider."""

    def __init__(self, inner: EmbeddingProvider) -> None:
        self.inner = inner
        self._lock = threading.Lock()
        self._texts: dict[str, Vector] = {}
        self._sentences: dict[SentenceKey, Vector] = {}

    @property
    def dim(self) -> int:
        return self.inner.dim

    def close(self) -> None:
        self.inner.close()

    def embed_many(self, texts: Sequence[str]) -> list[Vector]:
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in self._texts]
        if missing:
            fresh = self.inner.embed_many(missing)
            with self._lock:
                self._texts.update(zip(missing, fresh, strict=True))
        with self._lock:
            return [self._texts[t] for t in texts]

    def embed_sentence(self, case_id: str, sentence_id: int, text: str) -> Vector:
        key = (case_id, sentence_id)
        with self._lock:
            if key in self._sentences:
                return self._sentences[key]
        vec = self.inner.embed_sentence(case_id, sentence_id, text)
        with self._lock:
            self._sentences[key] = vec
        return vec


def embed(text: str, provider: EmbeddingProvider) -> Vector:
    """Embed ``text`` and check the provider's declared dimension.

    Raises:
        ValueError: If ``text`` is empty.
        EmbeddingError: If the returned vector does not match ``provider.dim``.
    """
    if not text:
        raise ValueError("cannot embed empty text")
    return as_vector(provider.embed(text), provider.dim)


# ----------------------------
# SIMILARITY & RANKING
# ----------------------------


def cosine(a: Vector, b: Vector) -> float:
    """Cosine similarity, clipped to [-1, 1].

    Raises:
        EmbeddingError: On a dimension mismatch or an all-zero vector.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise EmbeddingError("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


class VectorIndex:
    """Immutable map from (case_id, sentence_id) to sentence vectors."""

    def __init__(self, entries: Mapping[SentenceKey, Vector], dim: int) -> None:
        for key, vec in entries.items():
            if vec.shape != (dim,):
                raise EmbeddingError(f"vector for {key} does not have dim {dim}")
        self._entries = MappingProxyType(dict(entries))
        self.dim = dim

    @classmethod
    def build(
        cls,
        cases: Iterable[CaseStudy],
        provider: EmbeddingProvider,
        jobs: int = 1,
    ) -> "VectorIndex":
        """Embed every sentence of ``cases`` exactly once."""
        items = [
            (case.case_id, s.sentence_id, s.text)
            for case in cases
            for s in case.sentences
        ]

        def _embed(item: tuple[str, int, str]) -> Vector:
            return as_vector(provider.embed_sentence(*item), provider.dim)

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            vectors = list(pool.map(_embed, items))
        entries = {(c, s): v for (c, s, _), v in zip(items, vectors, strict=True)}
        logger.debug("Indexed %d sentences (dim=%d)", len(entries), provider.dim)
        return cls(entries, provider.dim)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def get(self, case_id: str, sentence_id: int) -> Vector:
        try:
            return self._entries[(case_id, sentence_id)]
        except KeyError:
            raise MissingEmbeddingError(
                f"missing sentence vector for {sentence_key(case_id, sentence_id)}"
            ) from None


class RankedEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    sentence_id: int
    score: float


class RankedList(BaseModel):
    """Sentences of one case by descending score, ties by ascending id."""

    model_config = ConfigDict(frozen=True)

    case_id: str
    entries: tuple[RankedEntry, ...]

    @model_validator(mode="after")
    def validate_order(self) -> "RankedList":
        for prev, cur in zip(self.entries, self.entries[1:], strict=False):
            if (-prev.score, prev.sentence_id) >= (-cur.score, cur.sentence_id):
                raise ValueError(
                    f"ranked list for {self.case_id!r} is not sorted by descending "
                    f"score then ascending id at sentence {cur.sentence_id}"
                )
        return self

    @classmethod
    def from_scores(cls, case_id: str, scores: Mapping[int, float]) -> "RankedList":
        ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
        return cls(
            case_id=case_id,
            entries=tuple(RankedEntry(sentence_id=i, score=s) for i, s in ordered),
        )

    @property
    def ids(self) -> list[int]:
        return [e.sentence_id for e in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries], dtype=float)

    def __len__(self) -> int:
        return len(self.entries)

    def to_record(self) -> list[dict[str, Any]]:
        return [e.model_dump() for e in self.entries]


def _relevance(query_vec: Vector, sentence_vec: Vector) -> float:
    # content-free text (all tokens dropped by the provider) embeds to zeros
    if not np.any(query_vec) or not np.any(sentence_vec):
        return 0.0
    return cosine(query_vec, sentence_vec)


def rank_sentences(case: CaseStudy, query_vec: Vector, index: VectorIndex) -> RankedList:
    """Score every sentence of ``case`` against ``query_vec`` and sort.

    Sentences whose vector is all zeros score 0.

    Raises:
        MissingEmbeddingError: If the index lacks a sentence of the case.
        EmbeddingError: If ``query_vec`` does not match the index dimension.
    """
    if np.asarray(query_vec).shape != (index.dim,):
        raise EmbeddingError(
            f"dimension mismatch: query has {np.asarray(query_vec).size}, index {index.dim}"
        )
    scores = {
        s.sentence_id: _relevance(query_vec, index.get(case.case_id, s.sentence_id))
        for s in case.sentences
    }
    return RankedList.from_scores(case.case_id, scores)
