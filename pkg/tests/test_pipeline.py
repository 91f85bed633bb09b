import csv
import json
from pathlib import Path

import pytest
from pydantic import SecretStr, ValidationError

from citemate.core.config import settings
from citemate.core.corpus import Dataset, RelevanceLabel, read_dataset, write_dataset
from citemate.core.embedding import HashingEmbeddingProvider
from citemate.core.generation import ScriptedClient
from citemate.core.pipeline import (
    ANSWERS_FILE,
    ATTRIBUTED_FILE,
    EVALUATION_CSV_FILE,
    EVALUATION_FILE,
    GRID_FILE,
    RETRIEVAL_CSV_FILE,
    RETRIEVAL_FILE,
    RETRIEVAL_REPORT_FILE,
    STATS_FILE,
    AnswersArtifact,
    MissingArtifactError,
    Pipeline,
    RunConfig,
    parallel_map,
)


def _rows(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def run_config(example_path: Path, embeddings_path: Path, tmp_path: Path):
    def make(**overrides) -> RunConfig:
        fields = {
            "dataset": example_path,
            "out": tmp_path / "run",
            "embedding": f"file:{embeddings_path}",
            "strategy": "fixed:2",
            "llm_endpoint": "mock:echo",
            "jobs": 1,
        }
        fields.update(overrides)
        return RunConfig(**fields)

    return make


class TestRunConfig:
    def test_unknown_strategy(self, example_path) -> None:
        with pytest.raises(ValidationError, match="Unsupported strategy"):
            RunConfig(dataset=example_path, strategy="fixed:2,magic")

    def test_record_has_no_secrets(self, run_config, monkeypatch) -> None:
        monkeypatch.setattr(settings, "LLM_API_TOKEN", SecretStr("llm-secret"))
        monkeypatch.setattr(settings, "EMBED_API_TOKEN", SecretStr("embed-secret"))
        record = run_config().record()
        assert record["strategy"] == "fixed:2"
        assert not {"LLM_API_TOKEN", "EMBED_API_TOKEN"} & {key.upper() for key in record}
        dumped = json.dumps(record)
        assert "llm-secret" not in dumped
        assert "embed-secret" not in dumped

    def test_threshold_bounds(self, run_config) -> None:
        with pytest.raises(ValueError):
            run_config(threshold=1.0)


class TestEndToEnd:
    def test_echo_run_recovers_essential_sentences(self, run_config) -> None:
        pipeline = Pipeline(run_config())
        retrieval = pipeline.retrieve()
        assert retrieval.runs[0].cases[0].truncation.kept_ids == (1, 2)
        pipeline.generate()
        pipeline.attribute()
        score = pipeline.evaluate()
        strict = score.factuality.strict
        assert (strict.precision, strict.recall, strict.f1) == (1.0, 1.0, 1.0)
        assert score.factuality.lenient.recall == 0.5
        assert score.relevance.bleu == pytest.approx(1.0)
        assert score.relevance.rouge == pytest.approx(1.0)
        assert score.relevance.semantic == 1.0
        for name in (RETRIEVAL_FILE, ANSWERS_FILE, ATTRIBUTED_FILE, EVALUATION_FILE, EVALUATION_CSV_FILE):
            assert (pipeline.out / name).exists()

    def test_echo_over_the_whole_note(self, run_config) -> None:
        pipeline = Pipeline(run_config(strategy="fixed:9", word_limit=10))
        pipeline.retrieve()
        answers = pipeline.generate()
        assert answers.failures == []
        assert answers.cases[0].to_answer().cited_ids == set(range(1, 10))

    def test_rerun_is_byte_identical(self, run_config) -> None:
        config = run_config()
        first = Pipeline(config)
        first.retrieve()
        first.generate()
        first.attribute()
        first.evaluate()
        saved = {n: (config.out / n).read_bytes() for n in (RETRIEVAL_FILE, EVALUATION_FILE)}

        second = Pipeline(config)
        second.retrieve()
        second.generate()
        second.attribute()
        second.evaluate()
        for name, content in saved.items():
            assert (config.out / name).read_bytes() == content

    def test_post_generation_attribution(self, run_config) -> None:
        pipeline = Pipeline(run_config(attribution_mode="post-generation"))
        pipeline.retrieve()
        answers = pipeline.generate()
        assert all(not c.citations for c in answers.cases)
        attributed = pipeline.attribute()
        assert all(c.citations for c in attributed.cases)
        score = pipeline.evaluate()
        assert score.factuality.strict.f1 == 1.0


class TestStages:
    @pytest.mark.parametrize("stage", ["generate", "attribute", "evaluate", "grid_search"])
    def test_missing_upstream(self, run_config, stage) -> None:
        pipeline = Pipeline(run_config())
        with pytest.raises(MissingArtifactError, match="run the upstream stage first"):
            getattr(pipeline, stage)()

    def test_retrieval_comparison_csv(self, run_config) -> None:
        pipeline = Pipeline(run_config(strategy="fixed:2,elbow,autocut"))
        artifact = pipeline.retrieve()
        assert [r.strategy for r in artifact.runs] == ["fixed:2", "elbow", "autocut"]
        rows = _rows(pipeline.out / RETRIEVAL_CSV_FILE)
        assert len(rows) == 1 + 3 * 2
        assert rows[0] == ["strategy", "variant", "P", "R", "F1"]
        assert rows[1][:2] == ["fixed:2", "strict"]
        assert (pipeline.out / RETRIEVAL_REPORT_FILE).exists()

    def test_unlabeled_split_skips_report(self, run_config, example_path, tmp_path, caplog) -> None:
        labeled = read_dataset(example_path)
        case = labeled.cases[0]
        unlabeled_case = case.model_copy(
            update={
                "sentences": tuple(
                    s.model_copy(update={"label": RelevanceLabel.UNLABELED}) for s in case.sentences
                )
            }
        )
        path = tmp_path / "test.json"
        write_dataset(Dataset(split="test", cases=(unlabeled_case,)), path)
        pipeline = Pipeline(run_config(dataset=path))
        artifact = pipeline.retrieve()
        assert artifact.runs[0].report is None
        assert not (pipeline.out / RETRIEVAL_CSV_FILE).exists()
        assert "skipping the retrieval report" in caplog.text

    def test_generation_failures_are_recorded(self, run_config, monkeypatch) -> None:
        monkeypatch.setattr(
            "citemate.core.pipeline.client_from_spec",
            lambda *args, **kwargs: ScriptedClient(["No citation here."] * 5),
        )
        pipeline = Pipeline(run_config())
        pipeline.retrieve()
        artifact = pipeline.generate()
        assert artifact.cases == []
        assert [f.case_id for f in artifact.failures] == ["appendix-a"]
        assert len(artifact.failures[0].attempts) == 5
        saved = AnswersArtifact.model_validate_json((pipeline.out / ANSWERS_FILE).read_text())
        assert saved.failures[0].error

    def test_stats(self, run_config) -> None:
        pipeline = Pipeline(run_config())
        report = pipeline.stats()
        assert report.sentence_counts == {"appendix-a": 9}
        assert _rows(pipeline.out / STATS_FILE)[0] == ["section", "key", "value"]

    def test_grid_search(self, run_config) -> None:
        pipeline = Pipeline(run_config(attribution_mode="post-generation", weight_step=0.5))
        pipeline.retrieve()
        pipeline.generate()
        results = pipeline.grid_search()
        assert len(results) == 6 * 9
        rows = _rows(pipeline.out / GRID_FILE)
        assert len(rows) == 1 + 54
        assert results[0].score.factuality.strict.f1 == 1.0


class TestClose:
    def test_closes_providers_built_from_the_config(self, run_config) -> None:
        with Pipeline(run_config(embedding="http://embed.example/embed")) as pipeline:
            inner = pipeline.provider.inner
        assert inner._client.is_closed
        assert "provider" not in vars(pipeline)

    def test_injected_providers_stay_open(self, run_config) -> None:
        class Tracking(HashingEmbeddingProvider):
            closed = False

            def close(self) -> None:
                self.closed = True

        injected = Tracking(64)
        with Pipeline(run_config(), provider=injected, text_provider=injected) as pipeline:
            pipeline.retrieve()
        assert not injected.closed


def test_parallel_map_preserves_order() -> None:
    items = list(range(50))
    assert parallel_map(lambda x: x * x, items, jobs=8) == [x * x for x in items]
    assert parallel_map(lambda x: x + 1, items, jobs=1) == [x + 1 for x in items]
