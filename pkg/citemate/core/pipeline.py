"""Stage orchestration: every stage reads and writes JSON/CSV artifacts in one directory.

Example:
    ```python
    run = RunConfig(dataset="dev.json", out="runs/a", strategy="fixed:2", llm_endpoint="mock:echo")
    pipeline = Pipeline(run)
    pipeline.retrieve()
    pipeline.generate()
    pipeline.attribute()
    score = pipeline.evaluate()
    ```
"""

import csv
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from logging import getLogger
from pathlib import Path
from typing import Any, TypeVar

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, field_validator

from citemate.core.attribution import (
    GRID_CSV_HEADER,
    AttributionConfig,
    GridResult,
    attribute_post_generation,
    grid_search,
)
from citemate.core.citations import Answer, Citation
from citemate.core.config import settings
from citemate.core.corpus import (
    CaseStudy,
    Dataset,
    QueryMode,
    StatsReport,
    build_query,
    corpus_stats,
    read_dataset,
)
from citemate.core.embedding import (
    CachedEmbeddingProvider,
    EmbeddingProvider,
    RankedEntry,
    VectorIndex,
    embed,
    rank_sentences,
)
from citemate.core.evaluation import evaluate, retrieval_eval
from citemate.core.generation import (
    AttributionMode,
    GenerationAttempt,
    GenerationFailedError,
    PromptSpec,
    Shots,
    client_from_spec,
    generate_valid,
)
from citemate.core.similarity import SimilarityWeights
from citemate.core.truncation import Strategy, TruncationResult
from citemate.types import FactualityReport, PipelineScore, Variant

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

T = TypeVar("T")
R = TypeVar("R")
M = TypeVar("M", bound=BaseModel)

RETRIEVAL_FILE = "retrieval.json"
RETRIEVAL_REPORT_FILE = "retrieval_report.json"
RETRIEVAL_CSV_FILE = "retrieval_report.csv"
ANSWERS_FILE = "answers.json"
ATTRIBUTED_FILE = "attributed.json"
EVALUATION_FILE = "evaluation.json"
EVALUATION_CSV_FILE = "evaluation.csv"
GRID_FILE = "grid_search.csv"
STATS_FILE = "stats.csv"


class MissingArtifactError(RuntimeError):
    """Raised when a stage needs the output of a stage that has not run."""


class RunConfig(BaseModel):
    """Everything a run depends on, recorded in each artifact. Secrets excluded."""

    model_config = ConfigDict(frozen=True)

    dataset: Path
    out: Path = Path("runs")
    embedding: str = settings.DEFAULT_EMBEDDING
    text_embedding: str = settings.TEXT_EMBEDDING
    llm_endpoint: str = "mock:echo"
    model: str = settings.LLM_MODEL
    strategy: str = Field(
        default=settings.DEFAULT_STRATEGY,
        description="One strategy, or a comma-separated list for retrieval comparison",
    )
    query_mode: QueryMode = QueryMode(settings.DEFAULT_QUERY_MODE)
    shots: Shots = Shots(settings.DEFAULT_SHOTS)
    attribution_mode: AttributionMode = AttributionMode(settings.DEFAULT_ATTRIBUTION_MODE)
    max_tokens: int = Field(default=settings.MAX_TOKENS, ge=1, le=4096)
    temperature: float = Field(default=settings.TEMPERATURE, ge=0)
    word_limit: int = Field(default=settings.WORD_LIMIT, ge=1)
    weights: SimilarityWeights = Field(
        default_factory=lambda: SimilarityWeights(
            w1=settings.ATTRIBUTION_WEIGHTS[0],
            w2=settings.ATTRIBUTION_WEIGHTS[1],
            w3=settings.ATTRIBUTION_WEIGHTS[2],
        )
    )
    threshold: float = Field(default=settings.ATTRIBUTION_THRESHOLD, ge=0, lt=1)
    weight_step: float = Field(default=settings.GRID_WEIGHT_STEP, gt=0, le=1)
    thresholds: tuple[float, ...] = settings.GRID_THRESHOLDS
    jobs: int = Field(default=settings.JOBS, ge=1)
    seed: int = settings.SEED

    @field_validator("strategy")
    @classmethod
    def validate_strategy(cls, v: str) -> str:
        for spec in v.split(","):
            Strategy.parse(spec)
        return v

    @property
    def strategies(self) -> list[Strategy]:
        return [Strategy.parse(spec) for spec in self.strategy.split(",")]

    @property
    def prompt_spec(self) -> PromptSpec:
        return PromptSpec(
            attribution_mode=self.attribution_mode,
            shots=self.shots,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
        )

    @property
    def attribution(self) -> AttributionConfig:
        return AttributionConfig(weights=self.weights, threshold=self.threshold)

    def record(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


# ----------------------------
# ARTIFACTS
# ----------------------------


class CaseRetrieval(BaseModel):
    case_id: str
    query: str
    ranked: list[RankedEntry]
    truncation: TruncationResult


class StrategyRun(BaseModel):
    strategy: str
    cases: list[CaseRetrieval]
    report: FactualityReport | None = None


class RetrievalArtifact(BaseModel):
    config: dict[str, Any]
    runs: list[StrategyRun]


class CitationRecord(BaseModel):
    sentence: int
    ids: list[int]


class CaseAnswer(BaseModel):
    """Answer of one case in the attribution output format."""

    case_id: str
    answer: list[str]
    citations: list[CitationRecord] = []
    evidence_ids: list[int] = []
    raw_output: str | None = None
    attempts: list[GenerationAttempt] = []

    @classmethod
    def of(cls, case_id: str, answer: Answer, **kwargs: Any) -> "CaseAnswer":
        return cls(
            case_id=case_id,
            answer=list(answer.sentences),
            citations=[
                CitationRecord(sentence=c.answer_sentence_index, ids=sorted(c.cited_ids))
                for c in answer.citations
            ],
            **kwargs,
        )

    def to_answer(self) -> Answer:
        return Answer(
            sentences=tuple(self.answer),
            citations=tuple(
                Citation(answer_sentence_index=c.sentence, cited_ids=frozenset(c.ids))
                for c in self.citations
            ),
        )


class CaseFailure(BaseModel):
    case_id: str
    error: str
    attempts: list[GenerationAttempt] = []


class AnswersArtifact(BaseModel):
    config: dict[str, Any]
    cases: list[CaseAnswer]
    failures: list[CaseFailure] = []

    def answers(self) -> dict[str, Answer]:
        return {c.case_id: c.to_answer() for c in self.cases}


class EvaluationArtifact(BaseModel):
    config: dict[str, Any]
    score: PipelineScore


def write_model(model: BaseModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_model(model: type[M], path: Path, needed_by: str) -> M:
    if not path.exists():
        raise MissingArtifactError(f"{needed_by} needs {path}; run the upstream stage first")
    return model.model_validate_json(path.read_text(encoding="utf-8"))


def write_csv(rows: Iterable[Sequence[str]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


def parallel_map(func: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    """Map in a bounded thread pool, preserving input order."""
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def _prf_rows(label: list[str], report: FactualityReport) -> list[list[str]]:
    return [
        [*label, variant.value, f"{prf.precision:.4f}", f"{prf.recall:.4f}", f"{prf.f1:.4f}"]
        for variant, prf in ((v, report.variant(v)) for v in Variant)
    ]


# ----------------------------
# PIPELINE
# ----------------------------


class Pipeline:
    """Runs the stages of one configuration against its output directory."""

    def __init__(
        self,
        config: RunConfig,
        provider: EmbeddingProvider | None = None,
        text_provider: EmbeddingProvider | None = None,
    ) -> None:
        self.config = config
        self._provider = provider
        self._text_provider = text_provider
        self._owned: list[EmbeddingProvider] = []

    def __enter__(self) -> Self:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def close(self) -> None:
        """Close the embedding providers built from the config. Injected providers stay open."""
        while self._owned:
            self._owned.pop().close()
        self.__dict__.pop("provider", None)
        self.__dict__.pop("text_provider", None)

    def _build_provider(self, spec: str) -> EmbeddingProvider:
        provider = EmbeddingProvider.from_spec(spec, token=_secret(settings.EMBED_API_TOKEN))
        self._owned.append(provider)
        return provider

    @property
    def out(self) -> Path:
        return self.config.out

    @cached_property
    def dataset(self) -> Dataset:
        return read_dataset(self.config.dataset)

    @property
    def cases(self) -> list[CaseStudy]:
        return list(self.dataset.cases)

    @cached_property
    def provider(self) -> EmbeddingProvider:
        if self._provider is not None:
            return CachedEmbeddingProvider(self._provider)
        return CachedEmbeddingProvider(self._build_provider(self.config.embedding))

    @cached_property
    def text_provider(self) -> EmbeddingProvider:
        if self._text_provider is not None:
            return CachedEmbeddingProvider(self._text_provider)
        if self.config.text_embedding == self.config.embedding:
            return self.provider
        return CachedEmbeddingProvider(self._build_provider(self.config.text_embedding))

    def stats(self) -> StatsReport:
        report = corpus_stats(self.cases)
        write_csv(report.csv_rows(), self.out / STATS_FILE)
        return report

    def retrieve(self) -> RetrievalArtifact:
        """Rank every case and truncate with each configured strategy."""
        cases = self.cases
        index = VectorIndex.build(cases, self.provider, jobs=self.config.jobs)

        def rank(case: CaseStudy) -> tuple[CaseStudy, str, Any]:
            query = build_query(case, self.config.query_mode)
            return case, query, rank_sentences(case, embed(query, self.provider), index)

        ranked = parallel_map(rank, cases, self.config.jobs)
        labeled = all(case.is_labeled for case in cases)
        runs: list[StrategyRun] = []
        for strategy in self.config.strategies:
            records = [
                CaseRetrieval(
                    case_id=case.case_id,
                    query=query,
                    ranked=list(ranked_list.entries),
                    truncation=strategy.apply(
                        ranked_list, query, {s.sentence_id: s.text for s in case.sentences}
                    ),
                )
                for case, query, ranked_list in ranked
            ]
            report = None
            if labeled:
                report = retrieval_eval({r.case_id: r.truncation for r in records}, cases)
            else:
                logger.warning("Dataset has unlabeled cases; skipping the retrieval report")
            runs.append(StrategyRun(strategy=strategy.spec, cases=records, report=report))

        artifact = RetrievalArtifact(config=self.config.record(), runs=runs)
        write_model(artifact, self.out / RETRIEVAL_FILE)
        if labeled:
            write_model(
                RetrievalArtifact(
                    config=self.config.record(),
                    runs=[StrategyRun(strategy=r.strategy, cases=[], report=r.report) for r in runs],
                ),
                self.out / RETRIEVAL_REPORT_FILE,
            )
            rows = [["strategy", "variant", "P", "R", "F1"]]
            for run in runs:
                if run.report is not None:
                    rows.extend(_prf_rows([run.strategy], run.report))
            write_csv(rows, self.out / RETRIEVAL_CSV_FILE)
        return artifact

    def generate(self) -> AnswersArtifact:
        """Generate an answer per case from the kept sentences of the first strategy.

        Raises:
            MissingArtifactError: If retrieval has not run.
            LlmUnavailableError: If the completion endpoint fails.
        """
        retrieval = read_model(RetrievalArtifact, self.out / RETRIEVAL_FILE, "generate")
        kept = {r.case_id: r.truncation.kept_ids for r in retrieval.runs[0].cases}
        client = client_from_spec(
            self.config.llm_endpoint, self.config.model, _secret(settings.LLM_API_TOKEN)
        )
        spec = self.config.prompt_spec

        def run(case: CaseStudy) -> CaseAnswer | CaseFailure:
            evidence = [(i, case.text_of(i)) for i in sorted(kept.get(case.case_id, ()))]
            try:
                result = generate_valid(client, spec, case, evidence, self.config.word_limit)
            except GenerationFailedError as e:
                logger.warning("%s", e)
                return CaseFailure(case_id=case.case_id, error=str(e), attempts=e.attempts)
            return CaseAnswer.of(
                case.case_id,
                result.answer,
                evidence_ids=[i for i, _ in evidence],
                raw_output=result.raw_output,
                attempts=result.attempts,
            )

        with client:
            results = parallel_map(run, self.cases, self.config.jobs)
        artifact = AnswersArtifact(
            config=self.config.record(),
            cases=[r for r in results if isinstance(r, CaseAnswer)],
            failures=[r for r in results if isinstance(r, CaseFailure)],
        )
        write_model(artifact, self.out / ANSWERS_FILE)
        return artifact

    def attribute(self) -> AnswersArtifact:
        """Attach citations to generated answers.

        Post-generation answers are attributed by weighted similarity against
        their evidence; post-retrieval answers keep their inline citations.
        """
        answers = read_model(AnswersArtifact, self.out / ANSWERS_FILE, "attribute")
        if self.config.attribution_mode is AttributionMode.POST_RETRIEVAL:
            attributed = answers.cases
        else:
            dataset = self.dataset
            config = self.config.attribution

            def run(record: CaseAnswer) -> CaseAnswer:
                case = dataset.case(record.case_id)
                evidence = [(i, case.text_of(i)) for i in record.evidence_ids]
                citations = attribute_post_generation(
                    record.answer, evidence, config, self.text_provider
                )
                return record.model_copy(
                    update={
                        "citations": [
                            CitationRecord(sentence=c.answer_sentence_index, ids=sorted(c.cited_ids))
                            for c in citations
                        ]
                    }
                )

            attributed = parallel_map(run, answers.cases, self.config.jobs)
        artifact = AnswersArtifact(
            config=self.config.record(), cases=attributed, failures=answers.failures
        )
        write_model(artifact, self.out / ATTRIBUTED_FILE)
        return artifact

    def evaluate(self, answers_path: Path | None = None) -> PipelineScore:
        """Score attributed answers (or ``answers_path``) against the gold labels."""
        path = answers_path or self.out / ATTRIBUTED_FILE
        answers = read_model(AnswersArtifact, path, "evaluate")
        score = evaluate(answers.answers(), self.cases, self.text_provider)
        write_model(
            EvaluationArtifact(config=self.config.record(), score=score),
            self.out / EVALUATION_FILE,
        )
        label = [self.config.strategy, self.config.model]
        rows = [["strategy", "model", "variant", "P", "R", "F1", "relevance", "overall"]]
        for row in _prf_rows(label, score.factuality):
            rows.append([*row, f"{score.relevance.mean:.4f}", f"{score.overall:.4f}"])
        write_csv(rows, self.out / EVALUATION_CSV_FILE)
        return score

    def grid_search(self, answers_path: Path | None = None) -> list[GridResult]:
        """Rank attribution weights and thresholds on citation-free answers."""
        path = answers_path or self.out / ANSWERS_FILE
        answers = read_model(AnswersArtifact, path, "grid-search")
        dataset = self.dataset
        evidence = {
            c.case_id: [(i, dataset.case(c.case_id).text_of(i)) for i in c.evidence_ids]
            for c in answers.cases
        }
        results = grid_search(
            self.cases,
            {c.case_id: c.answer for c in answers.cases},
            self.text_provider,
            weight_step=self.config.weight_step,
            thresholds=self.config.thresholds,
            evidence=evidence,
            jobs=self.config.jobs,
        )
        write_csv([GRID_CSV_HEADER, *(r.csv_row() for r in results)], self.out / GRID_FILE)
        return results


def _secret(value: Any) -> str | None:
    return value.get_secret_value() if value is not None else None
