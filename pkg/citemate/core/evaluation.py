"""Factuality, relevance and overall scoring of answers against gold labels."""

from abc import ABC, abstractmethod
from collections.abc import Collection, Mapping, Sequence
from logging import getLogger

import httpx

from citemate.core.citations import Answer
from citemate.core.config import settings
from citemate.core.corpus import CaseStudy, QueryMode, RelevanceLabel, build_query
from citemate.core.embedding import EmbeddingProvider, ProviderUnavailableError
from citemate.core.similarity import bleu, rouge_l, sari, semantic_sim
from citemate.core.truncation import TruncationResult
from citemate.types import (
    PRF,
    CaseFactuality,
    FactualityReport,
    PipelineScore,
    RelevanceReport,
    Variant,
)

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

GOLD_LABELS: dict[Variant, tuple[RelevanceLabel, ...]] = {
    Variant.STRICT: (RelevanceLabel.ESSENTIAL,),
    Variant.LENIENT: (RelevanceLabel.ESSENTIAL, RelevanceLabel.SUPPLEMENTARY),
}


class EmptyGoldError(ValueError):
    """Raised when recall is undefined because the gold set is empty."""


class MissingLabelsError(ValueError):
    """Raised when a case without relevance labels is evaluated."""


def prf(cited: Collection[int], gold: Collection[int]) -> PRF:
    """Precision, recall and F1 of ``cited`` against ``gold``.

    Raises:
        EmptyGoldError: If ``gold`` is empty.
    """
    cited, gold = set(cited), set(gold)
    if not gold:
        raise EmptyGoldError("gold set is empty")
    hits = len(cited & gold)
    precision = hits / len(cited) if cited else 0.0
    recall = hits / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision=precision, recall=recall, f1=f1)


def gold_ids(case: CaseStudy, variant: Variant) -> set[int]:
    """Gold sentence ids of ``case`` under ``variant``.

    Raises:
        MissingLabelsError: If the case is not fully labeled.
    """
    if not case.is_labeled:
        raise MissingLabelsError(f"case {case.case_id!r} has no relevance labels")
    return case.ids_with_labels(*GOLD_LABELS[variant])


def score_cited(cited: Mapping[str, Collection[int]], cases: Sequence[CaseStudy]) -> FactualityReport:
    """Macro-averaged strict and lenient scores of cited ids per case.

    Cases missing from ``cited`` count as citing nothing. A variant whose gold
    set is empty for a case is skipped for that case with a warning.
    """
    rows: list[CaseFactuality] = []
    for case in cases:
        ids = cited.get(case.case_id)
        if ids is None:
            logger.warning("No answer for case %r; scoring it as citing nothing", case.case_id)
            ids = ()
        scores: dict[str, PRF | None] = {}
        for variant in Variant:
            try:
                scores[variant.value] = prf(ids, gold_ids(case, variant))
            except EmptyGoldError:
                logger.warning(
                    "Skipping case %r for the %s variant: empty gold set",
                    case.case_id,
                    variant.value,
                )
                scores[variant.value] = None
        rows.append(CaseFactuality(case_id=case.case_id, **scores))
    return FactualityReport.from_cases(rows)


def factuality(answers: Mapping[str, Answer], cases: Sequence[CaseStudy]) -> FactualityReport:
    """Score the union of each answer's citation blocks against the gold labels."""
    return score_cited({cid: a.cited_ids for cid, a in answers.items()}, cases)


def retrieval_eval(
    truncations: Mapping[str, TruncationResult], cases: Sequence[CaseStudy]
) -> FactualityReport:
    """Score the kept ids of each truncation as if they were citations."""
    return score_cited({cid: t.kept_ids for cid, t in truncations.items()}, cases)


# ----------------------------
# RELEVANCE
# ----------------------------


class ExternalScorer(ABC):
    """A relevance metric computed outside this package."""

    name: str

    @abstractmethod
    def score(self, candidate: str, reference: str) -> float: ...  # pragma: no cover

    def close(self) -> None:
        """Release transport resources."""


class HttpExternalScorer(ExternalScorer):
    """Scorer endpoint: POST ``{"candidate", "reference"}`` -> ``{"score"}``."""

    def __init__(
        self,
        name: str,
        url: str,
        token: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.name = name
        self.url = url
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=settings.HTTP_TIMEOUT)
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def score(self, candidate: str, reference: str) -> float:
        try:
            response = self._client.post(
                self.url,
                json={"candidate": candidate, "reference": reference},
                headers=self._headers,
            )
            response.raise_for_status()
            value = float(response.json()["score"])
        except (httpx.HTTPError, KeyError, TypeError, ValueError) as e:
            raise ProviderUnavailableError(f"{self.name} scorer at {self.url}: {e}") from e
        return min(1.0, max(0.0, value))


def reference_text(case: CaseStudy) -> str:
    """Essential sentences of ``case`` joined in id order.

    Raises:
        EmptyGoldError: If the case has no essential sentence.
    """
    texts = [s.text for s in case.sentences if s.label is RelevanceLabel.ESSENTIAL]
    if not texts:
        raise EmptyGoldError(f"case {case.case_id!r} has no essential sentences")
    return " ".join(texts)


def relevance(
    answer_text: str,
    case: CaseStudy,
    provider: EmbeddingProvider,
    external: Sequence[ExternalScorer] = (),
    include_external: bool = settings.INCLUDE_EXTERNAL_IN_MEAN,
) -> RelevanceReport:
    """Compare an answer with the case's essential sentences.

    Raises:
        EmptyGoldError: If the case has no essential sentence.
    """
    reference = reference_text(case)
    source = build_query(case, QueryMode.BOTH)
    if answer_text.strip():
        semantic = semantic_sim(answer_text, reference, provider)
    else:
        semantic = 0.0
    return RelevanceReport(
        bleu=bleu(answer_text, [reference]),
        rouge=rouge_l(answer_text, reference),
        sari=sari(source, answer_text, [reference]),
        semantic=semantic,
        external={s.name: s.score(answer_text, reference) for s in external},
        external_in_mean=include_external,
    )


def overall_score(
    factuality_report: FactualityReport,
    relevance_report: RelevanceReport,
    per_case_relevance: Mapping[str, RelevanceReport] | None = None,
) -> PipelineScore:
    """Mean of the strict F1 and the relevance mean."""
    return PipelineScore(
        factuality=factuality_report,
        relevance=relevance_report,
        overall=(factuality_report.strict.f1 + relevance_report.mean) / 2,
        per_case_relevance=dict(per_case_relevance or {}),
    )


def case_relevance(
    answers: Mapping[str, Answer],
    cases: Sequence[CaseStudy],
    provider: EmbeddingProvider,
    external: Sequence[ExternalScorer] = (),
) -> dict[str, RelevanceReport]:
    """Relevance of each case's answer; cases without essential sentences are skipped."""
    reports: dict[str, RelevanceReport] = {}
    for case in cases:
        answer = answers.get(case.case_id)
        try:
            reports[case.case_id] = relevance(
                answer.text if answer else "", case, provider, external
            )
        except EmptyGoldError as e:
            logger.warning("Skipping relevance of case %r: %s", case.case_id, e)
    return reports


def evaluate(
    answers: Mapping[str, Answer],
    cases: Sequence[CaseStudy],
    provider: EmbeddingProvider,
    external: Sequence[ExternalScorer] = (),
) -> PipelineScore:
    """Full pipeline score of per-case answers."""
    per_case = case_relevance(answers, cases, provider, external)
    return overall_score(
        factuality(answers, cases),
        RelevanceReport.mean_of(list(per_case.values())),
        per_case,
    )
