"""Type definitions for Citemate evaluation reports."""

from collections.abc import Sequence
from enum import Enum
from typing import Annotated

import numpy as np
from pydantic import BaseModel, Field, model_validator

UnitFloat = Annotated[float, Field(ge=0.0, le=1.0)]


class Variant(str, Enum):
    """Gold set used for factuality: essential only, or essential plus supplementary."""

    STRICT = "strict"
    LENIENT = "lenient"


class PRF(BaseModel):
    """Precision, recall and F1 of a set of ids."""

    precision: UnitFloat
    recall: UnitFloat
    f1: UnitFloat

    @classmethod
    def mean(cls, items: Sequence["PRF"]) -> "PRF":
        """Macro average. An empty sequence averages to zeros."""
        if not items:
            return cls(precision=0.0, recall=0.0, f1=0.0)
        return cls(
            precision=float(np.mean([i.precision for i in items])),
            recall=float(np.mean([i.recall for i in items])),
            f1=float(np.mean([i.f1 for i in items])),
        )


class CaseFactuality(BaseModel):
    """Per-case scores. A variant is None when its gold set is empty."""

    case_id: str
    strict: PRF | None = None
    lenient: PRF | None = None


class FactualityReport(BaseModel):
    """Macro-averaged strict and lenient P/R/F1 with the per-case rows."""

    strict: PRF
    lenient: PRF
    per_case: list[CaseFactuality] = []

    @classmethod
    def from_cases(cls, per_case: list[CaseFactuality]) -> "FactualityReport":
        return cls(
            strict=PRF.mean([c.strict for c in per_case if c.strict is not None]),
            lenient=PRF.mean([c.lenient for c in per_case if c.lenient is not None]),
            per_case=per_case,
        )

    def variant(self, variant: Variant) -> PRF:
        return self.strict if variant is Variant.STRICT else self.lenient


class RelevanceReport(BaseModel):
    """Relevance components and their mean.

    External scores are reported separately and only enter the mean when
    ``external_in_mean`` is set.
    """

    bleu: UnitFloat
    rouge: UnitFloat
    sari: UnitFloat
    semantic: UnitFloat
    external: dict[str, float] = {}
    external_in_mean: bool = False
    mean: UnitFloat = Field(default=0.0, description="Filled from the components when omitted")

    @model_validator(mode="before")
    @classmethod
    def fill_mean(cls, data: dict) -> dict:
        if isinstance(data, dict) and data.get("mean") is None:
            data = {**data, "mean": cls._expected_mean(data)}
        return data

    @model_validator(mode="after")
    def validate_mean(self) -> "RelevanceReport":
        expected = self._expected_mean(self.model_dump(exclude={"mean"}))
        if abs(self.mean - expected) > 1e-9:
            raise ValueError(f"relevance mean {self.mean} does not match components ({expected})")
        return self

    @staticmethod
    def _expected_mean(data: dict) -> float:
        values = [float(data[k]) for k in ("bleu", "rouge", "sari", "semantic")]
        if data.get("external_in_mean"):
            values.extend(float(v) for v in (data.get("external") or {}).values())
        return float(np.mean(values))

    @classmethod
    def mean_of(cls, reports: Sequence["RelevanceReport"]) -> "RelevanceReport":
        """Component-wise macro average. An empty sequence averages to zeros."""
        if not reports:
            return cls(bleu=0.0, rouge=0.0, sari=0.0, semantic=0.0)
        names = sorted({name for r in reports for name in r.external})
        return cls(
            bleu=float(np.mean([r.bleu for r in reports])),
            rouge=float(np.mean([r.rouge for r in reports])),
            sari=float(np.mean([r.sari for r in reports])),
            semantic=float(np.mean([r.semantic for r in reports])),
            external={
                n: float(np.mean([r.external[n] for r in reports if n in r.external]))
                for n in names
            },
            external_in_mean=any(r.external_in_mean for r in reports),
        )


class PipelineScore(BaseModel):
    """Factuality, relevance and their mean."""

    factuality: FactualityReport
    relevance: RelevanceReport
    overall: UnitFloat
    per_case_relevance: dict[str, RelevanceReport] = {}

    @model_validator(mode="after")
    def validate_overall(self) -> "PipelineScore":
        expected = (self.factuality.strict.f1 + self.relevance.mean) / 2
        if abs(self.overall - expected) > 1e-9:
            raise ValueError(f"overall {self.overall} is not (strict F1 + relevance) / 2")
        return self
