"""Case studies, relevance labels and dataset ingestion.

A dataset file holds the cases of one split. Each case carries a patient
question, its clinician rewrite and the numbered sentences of the clinical
note excerpts, optionally labeled for relevance.
"""

import json
from enum import Enum
from logging import getLogger
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from citemate.core.config import settings

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

Split = Literal["dev", "test"]


class DatasetError(ValueError):
    """Raised when a dataset file violates the interchange schema."""


class RelevanceLabel(str, Enum):
    """Gold relevance label of a note sentence."""

    ESSENTIAL = "essential"
    SUPPLEMENTARY = "supplementary"
    NOT_RELEVANT = "not-relevant"
    UNLABELED = "unlabeled"


class QueryMode(str, Enum):
    """Which question(s) form the retrieval query."""

    PATIENT_ONLY = "patient"
    CLINICIAN_ONLY = "clinician"
    BOTH = "both"


class NoteSentence(BaseModel):
    """One numbered sentence of a clinical note excerpt."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    sentence_id: int = Field(..., ge=1, alias="id")
    text: str = Field(..., min_length=1)
    label: RelevanceLabel = RelevanceLabel.UNLABELED

    @field_validator("label", mode="before")
    @classmethod
    def validate_label(cls, v: Any) -> RelevanceLabel:
        if v is None:
            return RelevanceLabel.UNLABELED
        if isinstance(v, RelevanceLabel):
            return v
        # missing labels are written as null, never as a string
        if v == RelevanceLabel.UNLABELED.value:
            raise ValueError(f"unknown label string: {v!r}")
        try:
            return RelevanceLabel(v)
        except ValueError:
            raise ValueError(f"unknown label string: {v!r}") from None

    @field_validator("text")
    @classmethod
    def validate_text(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("sentence text is blank")
        return v


class CaseStudy(BaseModel):
    """A single shared-task unit: questions plus labeled note sentences."""

    model_config = ConfigDict(frozen=True)

    case_id: str = Field(..., min_length=1)
    patient_question: str = Field(..., min_length=1)
    clinician_question: str = Field(..., min_length=1)
    sentences: tuple[NoteSentence, ...] = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_sentence_ids(self) -> "CaseStudy":
        seen: set[int] = set()
        for position, sentence in enumerate(self.sentences):
            if sentence.sentence_id in seen:
                raise ValueError(
                    f"case {self.case_id!r} position {position}: "
                    f"duplicate sentence id {sentence.sentence_id}"
                )
            seen.add(sentence.sentence_id)
            if sentence.sentence_id != position + 1:
                raise ValueError(
                    f"case {self.case_id!r} position {position}: "
                    f"non-contiguous sentence ids (expected {position + 1}, "
                    f"got {sentence.sentence_id})"
                )
        return self

    @property
    def sentence_ids(self) -> list[int]:
        return [s.sentence_id for s in self.sentences]

    def sentence(self, sentence_id: int) -> NoteSentence:
        """Return the sentence printed with ``sentence_id`` in the note.

        Raises:
            KeyError: If the case has no such sentence.
        """
        if 1 <= sentence_id <= len(self.sentences):
            return self.sentences[sentence_id - 1]
        raise KeyError(f"case {self.case_id!r} has no sentence {sentence_id}")

    def text_of(self, sentence_id: int) -> str:
        return self.sentence(sentence_id).text

    @property
    def is_labeled(self) -> bool:
        return all(s.label is not RelevanceLabel.UNLABELED for s in self.sentences)

    def ids_with_labels(self, *labels: RelevanceLabel) -> set[int]:
        return {s.sentence_id for s in self.sentences if s.label in labels}


class Dataset(BaseModel):
    """All cases of one split, as stored in a dataset file."""

    model_config = ConfigDict(frozen=True)

    split: Split = "dev"
    cases: tuple[CaseStudy, ...] = ()

    @model_validator(mode="after")
    def validate_cases(self) -> "Dataset":
        seen: set[str] = set()
        for position, case in enumerate(self.cases):
            if case.case_id in seen:
                raise ValueError(
                    f"case {case.case_id!r} position {position}: duplicate case_id"
                )
            seen.add(case.case_id)
            if self.split == "dev" and not case.is_labeled:
                missing = [
                    s.sentence_id
                    for s in case.sentences
                    if s.label is RelevanceLabel.UNLABELED
                ]
                raise ValueError(
                    f"case {case.case_id!r}: dev split requires labels, "
                    f"unlabeled sentence ids {missing}"
                )
        return self

    def case(self, case_id: str) -> CaseStudy:
        for case in self.cases:
            if case.case_id == case_id:
                return case
        raise KeyError(f"unknown case {case_id!r}")

    def lookup(self, case_id: str, sentence_id: int) -> str:
        """Return the original text of sentence ``sentence_id`` in case ``case_id``."""
        return self.case(case_id).text_of(sentence_id)

    def to_json(self) -> str:
        """Serialize to the interchange format read by :func:`read_dataset`."""
        payload = {
            "split": self.split,
            "cases": [
                {
                    "case_id": case.case_id,
                    "patient_question": case.patient_question,
                    "clinician_question": case.clinician_question,
                    "sentences": [
                        {
                            "id": s.sentence_id,
                            "text": s.text,
                            "label": None
                            if s.label is RelevanceLabel.UNLABELED
                            else s.label.value,
                        }
                        for s in case.sentences
                    ],
                }
                for case in self.cases
            ],
        }
        return json.dumps(payload, ensure_ascii=False, indent=2)


def read_dataset(path: str | Path) -> Dataset:
    """Read and validate a dataset file.

    Args:
        path: Location of a UTF-8 JSON dataset file.

    Returns:
        Dataset: The validated split with cases in file order.

    Raises:
        DatasetError: If the file is unreadable, not JSON, or violates the schema.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed dataset {path}: {e}") from e
    if not isinstance(raw, dict) or "cases" not in raw:
        raise DatasetError(f"malformed dataset {path}: expected an object with 'cases'")
    try:
        dataset = Dataset.model_validate(raw)
    except ValidationError as e:
        messages = "; ".join(_describe_error(raw, err) for err in e.errors())
        raise DatasetError(f"invalid dataset {path}: {messages}") from e
    logger.debug("Loaded %d cases from %s", len(dataset.cases), path)
    return dataset


def _describe_error(raw: dict[str, Any], err: Any) -> str:
    """Render a pydantic error with the case id and sentence position it concerns."""
    loc = list(err["loc"])
    where = ".".join(str(p) for p in loc)
    if len(loc) >= 2 and loc[0] == "cases" and isinstance(loc[1], int):
        cases = raw.get("cases") or []
        case_id = "?"
        if loc[1] < len(cases) and isinstance(cases[loc[1]], dict):
            case_id = str(cases[loc[1]].get("case_id", "?"))
        where = f"case {case_id!r} (#{loc[1]})"
        if len(loc) >= 4 and loc[2] == "sentences":
            where += f" sentence position {loc[3]}"
    message = str(err["msg"]).removeprefix("Value error, ")
    return f"{where}: {message}"


def load_dataset(path: str | Path) -> list[CaseStudy]:
    """Load all cases of a dataset file, preserving order and sentence ids."""
    return list(read_dataset(path).cases)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(dataset.to_json() + "\n", encoding="utf-8")


def build_query(case: CaseStudy, mode: QueryMode = QueryMode.BOTH) -> str:
    """Build the retrieval query for a case.

    ``BOTH`` joins the patient and the clinician question with a single newline;
    identical questions are not deduplicated.
    """
    if mode is QueryMode.PATIENT_ONLY:
        return case.patient_question
    if mode is QueryMode.CLINICIAN_ONLY:
        return case.clinician_question
    return f"{case.patient_question}\n{case.clinician_question}"


# ----------------------------
# STATISTICS
# ----------------------------


class DistributionSummary(BaseModel):
    """Five-number summary plus mean."""

    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float

    @classmethod
    def of(cls, values: list[int]) -> "DistributionSummary":
        arr = np.asarray(values, dtype=float)
        q1, q3 = np.percentile(arr, [25, 75])
        return cls(
            min=float(arr.min()),
            q1=float(q1),
            median=float(np.median(arr)),
            mean=float(arr.mean()),
            q3=float(q3),
            max=float(arr.max()),
        )


class StatsReport(BaseModel):
    """Sentence count and sentence length statistics of a set of cases."""

    sentence_counts: dict[str, int]
    count_summary: DistributionSummary
    token_summary: DistributionSummary

    def csv_rows(self) -> list[list[str]]:
        rows: list[list[str]] = [["section", "key", "value"]]
        for case_id, count in self.sentence_counts.items():
            rows.append(["sentence_count", case_id, str(count)])
        for section, summary in (
            ("sentences_per_case", self.count_summary),
            ("tokens_per_sentence", self.token_summary),
        ):
            for key, value in summary.model_dump().items():
                rows.append([section, key, f"{value:.4f}"])
        return rows


def corpus_stats(cases: list[CaseStudy]) -> StatsReport:
    """Summarize sentences per case and whitespace tokens per sentence.

    Raises:
        ValueError: If ``cases`` is empty.
    """
    if not cases:
        raise ValueError("corpus_stats requires at least one case")
    counts = {case.case_id: len(case.sentences) for case in cases}
    token_counts = [len(s.text.split()) for case in cases for s in case.sentences]
    return StatsReport(
        sentence_counts=counts,
        count_summary=DistributionSummary.of(list(counts.values())),
        token_summary=DistributionSummary.of(token_counts),
    )
