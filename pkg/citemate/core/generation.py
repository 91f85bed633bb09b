"""Prompt templates, completion clients and the validity retry loop."""

import re
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from enum import Enum
from logging import getLogger

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import httpx
from pydantic import BaseModel, ConfigDict, Field

from citemate.core.citations import (
    TERMINATORS,
    Answer,
    CitationParseError,
    NoValidAttributionError,
    count_words,
    parse_citations,
    split_sentences,
)
from citemate.core.config import settings
from citemate.core.corpus import CaseStudy

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

Evidence = Sequence[tuple[int, str]]

NOTE_BEGIN = "[Clinical Note Begin]"
NOTE_END = "[Clinical Note End]"
NARRATIVE_BEGIN = "[Patient Narrative Context Begin]"
NARRATIVE_END = "[Patient Narrative Context End]"
QUESTION_BEGIN = "[Clinician Question Begin]"
QUESTION_END = "[Clinician Question End]"

NOTE_LINE = re.compile(r"^(\d+):\s?(.*)$")


class AttributionMode(str, Enum):
    POST_RETRIEVAL = "post-retrieval"
    POST_GENERATION = "post-generation"


class Shots(str, Enum):
    ZERO = "zero"
    ONE = "one"


class Validity(str, Enum):
    VALID = "valid"
    NO_CITATION = "no-citation"
    PARSE_ERROR = "parse-error"
    TOO_LONG = "too-long"


class PromptError(ValueError):
    """Raised when a prompt cannot be built."""


class LlmUnavailableError(RuntimeError):
    """Raised when the completion endpoint cannot be reached.

    Attributes:
        attempts (list[GenerationAttempt]): Attempts completed before the failure.
    """

    def __init__(self, message: str, attempts: list["GenerationAttempt"] | None = None) -> None:
        super().__init__(message)
        self.attempts = attempts or []


class GenerationFailedError(RuntimeError):
    """Raised when every attempt produced an invalid output.

    Attributes:
        attempts (list[GenerationAttempt]): All attempts, in order.
    """

    def __init__(self, message: str, attempts: list["GenerationAttempt"]) -> None:
        super().__init__(message)
        self.attempts = attempts


class ScriptExhaustedError(RuntimeError):
    """Raised when a scripted client has no responses left."""


class PromptSpec(BaseModel):
    """Prompt variant and decoding parameters."""

    model_config = ConfigDict(frozen=True)

    attribution_mode: AttributionMode = AttributionMode(settings.DEFAULT_ATTRIBUTION_MODE)
    shots: Shots = Shots(settings.DEFAULT_SHOTS)
    max_tokens: int = Field(default=settings.MAX_TOKENS, ge=1, le=4096)
    temperature: float = Field(default=settings.TEMPERATURE, ge=0)


class GenerationAttempt(BaseModel):
    """One call to the completion endpoint and its verdict."""

    attempt_number: int = Field(..., ge=1, le=5)
    raw_output: str
    validity: Validity
    detail: str | None = None


class GenerationResult(BaseModel):
    """The first valid output of a case with the attempts that led to it."""

    case_id: str
    answer: Answer
    raw_output: str
    attempts: list[GenerationAttempt]


# ----------------------------
# PROMPTS
# ----------------------------

_PREAMBLE = (
    "You are a clinical response generation system responsible for producing answers "
    "to health-related questions using the provided clinical note excerpts. "
    "Your answer MUST be:\n"
    "- **Accurate and Factual:** Grounded STRICTLY in the provided clinical note excerpts ONLY.\n"
    "- **Neutral and Objective:** DO NOT INCLUDE PERSONAL OPINIONS, NOTES, IRRELEVANT, "
    "OR UNRELATED comments.\n"
    "- **Concise and Relevant:** INCLUDE only clinically supported statements using the "
    "exact terminology found in the provided clinical notes. Do not add any additional "
    "interpretations or synonyms.\n"
    "- **Third-Person Perspective:** Do not address the reader directly.\n"
)

_CITATION_RULES = (
    "- **Citation:** Each statement must be supported by a NUMBERED CLINICAL NOTE SENTENCE "
    "from the Clinical Note Excerpts ONLY. The citation must be placed strictly AT THE END "
    "of the sentence. DO NOT insert citations within the sentence or phrase. When citing a "
    "single source, cite it as |id|. When a statement is supported by multiple sources, "
    "combine their IDs within a single pair of vertical bars (e.g., |id, id, id|) with IDs "
    "separated by commas and no extra vertical bars.\n"
    "- **Mandatory Citation Inclusion:** AT LEAST ONE SENTENCE in your answer MUST include "
    "a citation from the provided clinical notes.\n"
)

_INPUTS = (
    "\n**Inputs:**\n"
    "1. **Clinical Note Excerpts:** Retrieved sentences from the patient's clinical record, "
    "numbered.\n"
    "2. **Patient Narrative Context:** Additional context from the patient's perspective.\n"
    "3. **Clinician Question:** The primary question requiring an answer.\n"
    "\n**Your Task:**\n"
    "Generate a response based strictly on the provided input. Follow the structured format "
    "exactly, use only the exact terms from the clinical note excerpts, and ensure all "
    "citations are formatted consistently.\n"
)

_EXAMPLE_QUESTION = "Why did they perform the emergency salvage repair on him?"
_EXAMPLE_NOTE = (
    "1: He was transferred to the hospital on 2025-1-20 for emergent repair of his ruptured "
    "thoracoabdominal aortic aneurysm.\n"
    "2: He was immediately taken to the operating room where he underwent an emergent salvage "
    "repair of ruptured thoracoabdominal aortic aneurysm with a 34-mm Dacron tube graft using "
    "deep hypothermic circulatory arrest.\n"
)
_EXAMPLE_ANSWER = (
    "His aortic aneurysm was caused by the rupture of a thoracoabdominal aortic aneurysm, "
    "which required emergent surgical intervention{c1}. He underwent a complex salvage repair "
    "using a 34-mm Dacron tube graft and deep hypothermic circulatory arrest to address the "
    "rupture{c2}."
)


def _example(mode: AttributionMode) -> str:
    cited = mode is AttributionMode.POST_RETRIEVAL
    answer = _EXAMPLE_ANSWER.format(c1=" |1|" if cited else "", c2=" |2|" if cited else "")
    return (
        "\n**Example:**\n"
        f'If the clinician asks, "{_EXAMPLE_QUESTION}", and the note states:\n'
        f"{_EXAMPLE_NOTE}"
        "Then the response should be:\n"
        f"{answer}\n"
    )


def render_evidence(evidence: Evidence) -> str:
    return "\n".join(f"{sentence_id}: {text}" for sentence_id, text in evidence)


def build_prompt(spec: PromptSpec, case: CaseStudy, evidence: Evidence) -> str:
    """Instantiate the prompt template selected by ``spec``.

    Evidence lines keep their original note sentence ids.

    Raises:
        PromptError: If ``evidence`` is empty.
    """
    if not evidence:
        raise PromptError(f"no evidence to prompt with for case {case.case_id!r}")
    parts = [_PREAMBLE]
    if spec.attribution_mode is AttributionMode.POST_RETRIEVAL:
        parts.append(_CITATION_RULES)
    parts.append(_INPUTS)
    if spec.shots is Shots.ONE:
        parts.append(_example(spec.attribution_mode))
    parts.append(
        f"\n{NOTE_BEGIN}\n{render_evidence(evidence)}\n{NOTE_END}\n\n"
        f"{NARRATIVE_BEGIN}\n{case.patient_question}\n{NARRATIVE_END}\n\n"
        f"{QUESTION_BEGIN}\n{case.clinician_question}\n{QUESTION_END}\n\n"
        "Provide your structured answer below:\n"
    )
    return "".join(parts)


def evidence_from_prompt(prompt: str) -> list[tuple[int, str]]:
    """Recover the numbered evidence lines from a prompt's note section."""
    start = prompt.find(NOTE_BEGIN)
    end = prompt.find(NOTE_END, start)
    if start < 0 or end < 0:
        raise PromptError("prompt has no clinical note section")
    lines = prompt[start + len(NOTE_BEGIN) : end].strip().splitlines()
    evidence = []
    for line in lines:
        match = NOTE_LINE.match(line.strip())
        if match:
            evidence.append((int(match.group(1)), match.group(2)))
    return evidence


# ----------------------------
# CLIENTS
# ----------------------------


class LlmClient(ABC):
    """Text-in, text-out completion contract.

    ``word_limit_applies`` is False for clients whose output length is fixed by
    their evidence rather than by the prompt's word limit.
    """

    word_limit_applies: bool = True

    @abstractmethod
    def complete(self, prompt: str, spec: PromptSpec) -> str: ...  # pragma: no cover

    def close(self) -> None:
        """Release transport resources. Offline clients hold none."""

    def __enter__(self) -> Self:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class HttpLlmClient(LlmClient):
    """Completion endpoint: POST ``{model, prompt, max_tokens, temperature}`` -> ``{text}``."""

    def __init__(
        self,
        url: str,
        model: str = settings.LLM_MODEL,
        token: str | None = None,
        client: httpx.Client | None = None,
        timeout: float = settings.HTTP_TIMEOUT,
    ) -> None:
        self.url = url
        self.model = model
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def complete(self, prompt: str, spec: PromptSpec) -> str:
        payload = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": spec.max_tokens,
            "temperature": spec.temperature,
        }
        try:
            response = self._client.post(self.url, json=payload, headers=self._headers)
            response.raise_for_status()
            text = response.json()["text"]
        except (httpx.HTTPError, KeyError, TypeError, ValueError) as e:
            raise LlmUnavailableError(f"completion endpoint {self.url}: {e}") from e
        if not isinstance(text, str):
            raise LlmUnavailableError(f"completion endpoint {self.url} returned non-text output")
        return text


class EchoClient(LlmClient):
    """Answers with every evidence sentence verbatim, each citing its own id.

    Without fixed evidence the sentences are read back from the prompt. In
    post-generation mode no citation blocks are written.
    """

    word_limit_applies = False

    def __init__(self, evidence: Evidence | None = None) -> None:
        self.evidence = list(evidence) if evidence is not None else None

    def complete(self, prompt: str, spec: PromptSpec) -> str:
        evidence = self.evidence if self.evidence is not None else evidence_from_prompt(prompt)
        cite = spec.attribution_mode is AttributionMode.POST_RETRIEVAL
        sentences = []
        for sentence_id, text in evidence:
            body = text.strip().rstrip(TERMINATORS).rstrip()
            sentences.append(f"{body} |{sentence_id}|." if cite else f"{body}.")
        return " ".join(sentences)


class ScriptedClient(LlmClient):
    """Replays a fixed sequence of responses."""

    def __init__(self, responses: Iterable[str]) -> None:
        self.responses = list(responses)
        self.calls = 0

    def complete(self, prompt: str, spec: PromptSpec) -> str:
        if self.calls >= len(self.responses):
            raise ScriptExhaustedError(f"script exhausted after {self.calls} responses")
        self.calls += 1
        return self.responses[self.calls - 1]


def mock_client(
    mode: str, evidence: Evidence | None = None, responses: Iterable[str] | None = None
) -> LlmClient:
    """Build an offline client: ``"echo"`` or ``"scripted"``."""
    if mode == "echo":
        return EchoClient(evidence)
    if mode == "scripted":
        return ScriptedClient(responses or [])
    raise ValueError(f"Unsupported mock client: {mode!r}. Supported: ['echo', 'scripted']")


def client_from_spec(endpoint: str, model: str = settings.LLM_MODEL, token: str | None = None) -> LlmClient:
    """``mock:echo`` for the offline echo client, otherwise an endpoint URL."""
    if endpoint.startswith("mock:"):
        return mock_client(endpoint.removeprefix("mock:"))
    if not endpoint.startswith(("http://", "https://")):
        raise ValueError(f"Unsupported LLM endpoint: {endpoint!r}")
    return HttpLlmClient(endpoint, model=model, token=token)


# ----------------------------
# RETRY LOOP
# ----------------------------


def judge(
    raw: str, spec: PromptSpec, valid_ids: Iterable[int], word_limit: int | None
) -> tuple[Validity, Answer | None, str | None]:
    """Validity of one raw output and the answer it parses to. A ``None`` limit skips the word cap."""
    text = raw.strip()
    answer: Answer | None
    if spec.attribution_mode is AttributionMode.POST_RETRIEVAL:
        try:
            answer = parse_citations(text, set(valid_ids))
        except CitationParseError as e:
            return Validity.PARSE_ERROR, None, str(e)
        except NoValidAttributionError as e:
            return Validity.NO_CITATION, None, str(e)
    else:
        if not text:
            return Validity.PARSE_ERROR, None, "empty output"
        answer = Answer(sentences=tuple(split_sentences(text)))
    words = count_words(text)
    if word_limit is not None and words > word_limit:
        return Validity.TOO_LONG, None, f"{words} words exceed the limit of {word_limit}"
    if not text.endswith((*TERMINATORS, "|")):
        return Validity.TOO_LONG, None, "output ends mid-sentence"
    return Validity.VALID, answer, None


def generate_valid(
    client: LlmClient,
    spec: PromptSpec,
    case: CaseStudy,
    evidence: Evidence,
    word_limit: int = settings.WORD_LIMIT,
    max_attempts: int = settings.MAX_ATTEMPTS,
) -> GenerationResult:
    """Prompt until an output is valid, at most ``max_attempts`` times.

    The word cap is not enforced for clients with ``word_limit_applies`` unset.

    Raises:
        PromptError: If ``evidence`` is empty.
        LlmUnavailableError: If the endpoint fails; carries the attempts so far.
        GenerationFailedError: If every attempt was invalid; carries all attempts.
    """
    prompt = build_prompt(spec, case, evidence)
    valid_ids = [i for i, _ in evidence]
    limit = word_limit if client.word_limit_applies else None
    attempts: list[GenerationAttempt] = []
    for number in range(1, max_attempts + 1):
        try:
            raw = client.complete(prompt, spec)
        except LlmUnavailableError as e:
            raise LlmUnavailableError(str(e), attempts) from e
        validity, answer, detail = judge(raw, spec, valid_ids, limit)
        attempts.append(
            GenerationAttempt(attempt_number=number, raw_output=raw, validity=validity, detail=detail)
        )
        if answer is not None and validity is Validity.VALID:
            logger.debug("Case %r valid after %d attempt(s)", case.case_id, number)
            return GenerationResult(
                case_id=case.case_id, answer=answer, raw_output=raw, attempts=attempts
            )
        logger.warning(
            "Case %r attempt %d invalid (%s): %s", case.case_id, number, validity.value, detail
        )
    raise GenerationFailedError(
        f"no valid output for case {case.case_id!r} after {len(attempts)} attempts", attempts
    )
