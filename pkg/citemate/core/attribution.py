"""Post-generation attribution and the weight/threshold grid search."""

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from citemate.core.citations import Answer, Citation
from citemate.core.config import settings
from citemate.core.corpus import CaseStudy
from citemate.core.embedding import EmbeddingProvider
from citemate.core.evaluation import case_relevance, factuality, overall_score
from citemate.core.similarity import SimilarityWeights, similarity_components
from citemate.types import PipelineScore, RelevanceReport

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

Evidence = Sequence[tuple[int, str]]

GRID_CSV_HEADER = ["w1", "w2", "w3", "T", "strictP", "strictF1", "relevance", "overall"]


class AttributionConfig(BaseModel):
    """Similarity weights and the attribution threshold T."""

    model_config = ConfigDict(frozen=True)

    weights: SimilarityWeights = Field(
        default_factory=lambda: SimilarityWeights(
            w1=settings.ATTRIBUTION_WEIGHTS[0],
            w2=settings.ATTRIBUTION_WEIGHTS[1],
            w3=settings.ATTRIBUTION_WEIGHTS[2],
        )
    )
    threshold: float = Field(default=settings.ATTRIBUTION_THRESHOLD, ge=0, lt=1)


def component_matrix(
    answer_sentences: Sequence[str], evidence: Evidence, provider: EmbeddingProvider
) -> np.ndarray:
    """(answer sentence, evidence sentence, component) array of similarities."""
    matrix = np.zeros((len(answer_sentences), len(evidence), 3))
    for i, sentence in enumerate(answer_sentences):
        for j, (_, text) in enumerate(evidence):
            matrix[i, j] = similarity_components(sentence, text, provider)
    return matrix


def citations_from_matrix(
    matrix: np.ndarray, evidence_ids: Sequence[int], config: AttributionConfig
) -> list[Citation]:
    """Cite every evidence sentence whose combined score exceeds the threshold."""
    if matrix.size == 0:
        return []
    scores = np.clip(matrix @ config.weights.as_array(), 0.0, 1.0)
    citations = []
    for i, row in enumerate(scores):
        cited = frozenset(evidence_ids[j] for j in np.nonzero(row > config.threshold)[0])
        if cited:
            citations.append(Citation(answer_sentence_index=i, cited_ids=cited))
    return citations


def attribute_post_generation(
    answer_sentences: Sequence[str],
    retrieved: Evidence,
    config: AttributionConfig,
    provider: EmbeddingProvider,
) -> list[Citation]:
    """Attribute citation-free answer sentences to the retrieved evidence.

    Raises:
        ValueError: If ``retrieved`` is empty.
    """
    if not retrieved:
        raise ValueError("empty retrieved list")
    matrix = component_matrix(answer_sentences, retrieved, provider)
    return citations_from_matrix(matrix, [i for i, _ in retrieved], config)


# ----------------------------
# GRID SEARCH
# ----------------------------


def weight_grid(step: float = settings.GRID_WEIGHT_STEP) -> list[SimilarityWeights]:
    """All non-negative multiples of ``step`` summing to one.

    Raises:
        ValueError: If ``1 / step`` is not an integer.
    """
    if step <= 0:
        raise ValueError(f"weight step must be positive, got {step}")
    parts = round(1 / step)
    if parts < 1 or abs(parts * step - 1) > 1e-9:
        raise ValueError(f"weight step {step} does not divide 1")
    return [
        SimilarityWeights(w1=i / parts, w2=j / parts, w3=(parts - i - j) / parts)
        for i in range(parts + 1)
        for j in range(parts + 1 - i)
    ]


class GridResult(BaseModel):
    """One evaluated (weights, threshold) configuration."""

    weights: SimilarityWeights
    threshold: float
    score: PipelineScore

    def csv_row(self) -> list[str]:
        w = self.weights
        s = self.score
        return [
            f"{w.w1:g}",
            f"{w.w2:g}",
            f"{w.w3:g}",
            f"{self.threshold:g}",
            f"{s.factuality.strict.precision:.4f}",
            f"{s.factuality.strict.f1:.4f}",
            f"{s.relevance.mean:.4f}",
            f"{s.overall:.4f}",
        ]


def grid_search(
    dev_cases: Sequence[CaseStudy],
    answers: Mapping[str, Sequence[str]],
    provider: EmbeddingProvider,
    weight_step: float = settings.GRID_WEIGHT_STEP,
    thresholds: Sequence[float] = settings.GRID_THRESHOLDS,
    evidence: Mapping[str, Evidence] | None = None,
    jobs: int = settings.JOBS,
) -> list[GridResult]:
    """Evaluate every weight triple and threshold, best overall score first.

    Args:
        dev_cases: Labeled cases.
        answers: Citation-free answer sentences per case id.
        provider: Embedding provider for the semantic component.
        weight_step: Spacing of the weight simplex grid.
        thresholds: Attribution thresholds to try.
        evidence: Evidence shown for each case; all note sentences by default.
        jobs: Worker bound over configurations.

    Returns:
        list[GridResult]: Sorted by overall score descending; ties keep
            enumeration order.
    """
    weights = weight_grid(weight_step)
    if not thresholds:
        raise ValueError("grid search needs at least one threshold")
    evidence = evidence or {
        case.case_id: [(s.sentence_id, s.text) for s in case.sentences] for case in dev_cases
    }

    matrices: dict[str, np.ndarray] = {}
    for case in dev_cases:
        sentences = answers.get(case.case_id, ())
        matrices[case.case_id] = component_matrix(sentences, evidence.get(case.case_id, ()), provider)
    logger.debug("Precomputed similarity components for %d cases", len(matrices))

    plain = {cid: Answer(sentences=tuple(s)) for cid, s in answers.items()}
    per_case = case_relevance(plain, dev_cases, provider)
    relevance = RelevanceReport.mean_of(list(per_case.values()))

    def evaluate(config: AttributionConfig) -> GridResult:
        attributed = {
            case.case_id: Answer(
                sentences=tuple(answers.get(case.case_id, ())),
                citations=tuple(
                    citations_from_matrix(
                        matrices[case.case_id],
                        [i for i, _ in evidence.get(case.case_id, ())],
                        config,
                    )
                ),
            )
            for case in dev_cases
        }
        score = overall_score(factuality(attributed, dev_cases), relevance)
        return GridResult(weights=config.weights, threshold=config.threshold, score=score)

    configs = [AttributionConfig(weights=w, threshold=t) for w in weights for t in thresholds]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(evaluate, configs))
    logger.info("Evaluated %d attribution configurations", len(results))
    return sorted(results, key=lambda r: -r.score.overall)
