# type: ignore
"""Configuration file for pytest that also disables type checking for all test files."""

# This file's presence with the type: ignore comment will make mypy ignore all files in
# the tests directory

from pathlib import Path

import pytest
from fastapi import FastAPI, HTTPException, Request
from fastapi.testclient import TestClient

import citemate
from citemate.core.corpus import CaseStudy, NoteSentence, RelevanceLabel, load_dataset
from citemate.core.embedding import FileEmbeddingProvider, HashingEmbeddingProvider

DATA_DIR = Path(citemate.__file__).parent / "data"

LABELS = {
    "e": RelevanceLabel.ESSENTIAL,
    "s": RelevanceLabel.SUPPLEMENTARY,
    "n": RelevanceLabel.NOT_RELEVANT,
    "u": RelevanceLabel.UNLABELED,
}


def make_case(
    case_id: str = "c1",
    texts: list[str] | None = None,
    labels: str | None = None,
    patient: str = "Why was my father operated on?",
    clinician: str = "Why was the surgery performed?",
) -> CaseStudy:
    """Build a case from sentence texts and a label string such as ``"eesn"``."""
    texts = texts or [f"Sentence number {i} of the note." for i in range(1, 5)]
    labels = labels or "n" * len(texts)
    return CaseStudy(
        case_id=case_id,
        patient_question=patient,
        clinician_question=clinician,
        sentences=tuple(
            NoteSentence(id=i, text=text, label=LABELS[label])
            for i, (text, label) in enumerate(zip(texts, labels, strict=True), start=1)
        ),
    )


@pytest.fixture
def example_path() -> Path:
    return DATA_DIR / "example_case.json"


@pytest.fixture
def embeddings_path() -> Path:
    return DATA_DIR / "example_embeddings.jsonl"


@pytest.fixture
def case(example_path: Path) -> CaseStudy:
    return load_dataset(example_path)[0]


@pytest.fixture
def file_provider(embeddings_path: Path) -> FileEmbeddingProvider:
    return FileEmbeddingProvider.load(embeddings_path)


@pytest.fixture
def hash_provider() -> HashingEmbeddingProvider:
    return HashingEmbeddingProvider(256)


@pytest.fixture
def app() -> FastAPI:
    """Fake embedding, completion and scorer endpoints.

    Replies are configured through ``app.state``; every request body and
    authorization header is recorded in ``app.state.requests``.
    """
    app = FastAPI()
    app.state.requests = []
    app.state.dim = 4
    app.state.replies = []
    app.state.score = 0.5

    async def record(request: Request) -> dict:
        body = await request.json()
        app.state.requests.append((body, request.headers.get("authorization")))
        return body

    @app.post("/embed")
    async def embed(request: Request) -> dict:
        body = await record(request)
        return {"vectors": [[1.0] * app.state.dim for _ in body["inputs"]]}

    @app.post("/complete")
    async def complete(request: Request) -> dict:
        await record(request)
        if not app.state.replies:
            raise HTTPException(status_code=503, detail="no replies configured")
        return {"text": app.state.replies.pop(0)}

    @app.post("/score")
    async def score(request: Request) -> dict:
        await record(request)
        return {"score": app.state.score}

    @app.post("/broken")
    async def broken() -> dict:
        raise HTTPException(status_code=500, detail="boom")

    return app


@pytest.fixture
def http(app: FastAPI) -> TestClient:
    return TestClient(app)
