import numpy as np
import pytest
from fastapi.testclient import TestClient

from citemate.core.citations import Answer, Citation
from citemate.core.corpus import RelevanceLabel, build_query
from citemate.core.embedding import ProviderUnavailableError, RankedList
from citemate.core.evaluation import (
    EmptyGoldError,
    HttpExternalScorer,
    MissingLabelsError,
    evaluate,
    factuality,
    gold_ids,
    overall_score,
    prf,
    reference_text,
    relevance,
    retrieval_eval,
)
from citemate.core.similarity import sari
from citemate.core.truncation import fixed_k
from citemate.types import PRF, FactualityReport, RelevanceReport, Variant
from tests.conftest import make_case


def cited(*ids: int) -> Answer:
    return Answer(
        sentences=("Answer.",),
        citations=(Citation(answer_sentence_index=0, cited_ids=frozenset(ids)),) if ids else (),
    )


class TestPrf:
    def test_perfect(self) -> None:
        assert prf({1, 2}, {1, 2}) == PRF(precision=1.0, recall=1.0, f1=1.0)

    def test_over_citing(self) -> None:
        score = prf({1, 2, 3, 4}, {1, 2})
        assert score.precision == 0.5
        assert score.recall == 1.0
        assert score.f1 == pytest.approx(2 / 3)

    def test_nothing_cited(self) -> None:
        assert prf(set(), {1}) == PRF(precision=0.0, recall=0.0, f1=0.0)

    def test_empty_gold(self) -> None:
        with pytest.raises(EmptyGoldError):
            prf({1}, set())

    def test_set_arithmetic_oracle(self) -> None:
        rng = np.random.default_rng(21)
        for _ in range(1000):
            universe = range(1, 9)
            cited_ids = {i for i in universe if rng.random() < 0.4}
            gold = {i for i in universe if rng.random() < 0.4} or {1}
            tp = len(cited_ids & gold)
            p = tp / len(cited_ids) if cited_ids else 0.0
            r = tp / len(gold)
            f = 2 * p * r / (p + r) if p + r else 0.0
            score = prf(cited_ids, gold)
            assert (score.precision, score.recall) == (p, r)
            assert score.f1 == pytest.approx(f)


class TestFactuality:
    def test_strict_and_lenient(self, case) -> None:
        report = factuality({case.case_id: cited(1, 2)}, [case])
        assert report.strict == PRF(precision=1.0, recall=1.0, f1=1.0)
        assert report.lenient.precision == 1.0
        assert report.lenient.recall == 0.5
        assert report.variant(Variant.LENIENT) == report.lenient

    def test_macro_average(self) -> None:
        a = make_case("a", labels="eenn")
        b = make_case("b", labels="ennn")
        report = factuality({"a": cited(1, 2), "b": cited(2)}, [a, b])
        assert report.strict.precision == 0.5
        assert report.strict.f1 == 0.5
        assert [c.case_id for c in report.per_case] == ["a", "b"]

    def test_missing_answer_counts_as_empty(self, case, caplog) -> None:
        report = factuality({}, [case])
        assert report.strict.f1 == 0.0
        assert "No answer for case" in caplog.text

    def test_empty_gold_is_skipped(self, caplog) -> None:
        with_gold = make_case("a", labels="esnn")
        without_essential = make_case("b", labels="snnn")
        report = factuality({"a": cited(1), "b": cited(1)}, [with_gold, without_essential])
        assert report.strict.f1 == 1.0
        assert report.per_case[1].strict is None
        assert report.per_case[1].lenient is not None
        assert "empty gold set" in caplog.text

    def test_unlabeled_case(self) -> None:
        case = make_case(labels="uuuu")
        with pytest.raises(MissingLabelsError):
            gold_ids(case, Variant.STRICT)


def test_retrieval_recall_ceiling(case) -> None:
    ranked = RankedList.from_scores(case.case_id, {i: 1.0 / i for i in case.sentence_ids})
    report = retrieval_eval({case.case_id: fixed_k(ranked, len(case.sentences))}, [case])
    assert report.strict.recall == 1.0
    assert report.lenient.recall == 1.0


class TestRelevance:
    def test_identity(self, case, hash_provider) -> None:
        report = relevance(reference_text(case), case, hash_provider)
        assert report.bleu == pytest.approx(1.0)
        assert report.rouge == pytest.approx(1.0)
        assert report.sari == pytest.approx(sari(build_query(case), reference_text(case), [reference_text(case)]))
        assert report.semantic == 1.0
        assert report.mean == pytest.approx((3 + report.sari) / 4)

    def test_empty_answer(self, case, hash_provider) -> None:
        report = relevance("", case, hash_provider)
        assert report.bleu == report.rouge == report.semantic == 0.0

    def test_no_essential_sentences(self, hash_provider) -> None:
        with pytest.raises(EmptyGoldError):
            relevance("x", make_case(labels="snnn"), hash_provider)

    def test_external_scorer(self, app, http: TestClient, case, hash_provider) -> None:
        app.state.score = 1.7
        scorer = HttpExternalScorer("alignscore", "http://testserver/score", client=http)
        report = relevance(reference_text(case), case, hash_provider, external=[scorer])
        assert report.external == {"alignscore": 1.0}
        assert report.mean == pytest.approx((3 + report.sari) / 4)
        body, _ = app.state.requests[-1]
        assert body == {"candidate": reference_text(case), "reference": reference_text(case)}

    def test_external_only_enters_mean_on_request(self, app, http: TestClient, case, hash_provider) -> None:
        app.state.score = 0.0
        scorer = HttpExternalScorer("medcon", "http://testserver/score", client=http)
        text = reference_text(case)
        plain = relevance(text, case, hash_provider, [scorer])
        assert plain.mean == pytest.approx((3 + plain.sari) / 4)
        with_external = relevance(text, case, hash_provider, [scorer], include_external=True)
        assert with_external.mean == pytest.approx((3 + plain.sari) / 5)

    def test_external_scorer_unavailable(self, http: TestClient, case, hash_provider) -> None:
        scorer = HttpExternalScorer("medcon", "http://testserver/broken", client=http)
        with pytest.raises(ProviderUnavailableError):
            relevance("x", case, hash_provider, [scorer])

    def test_external_scorer_close(self, http: TestClient) -> None:
        HttpExternalScorer("medcon", "http://testserver/score", client=http).close()
        assert not http.is_closed
        owned = HttpExternalScorer("medcon", "http://scorer.example/score")
        owned.close()
        assert owned._client.is_closed

    def test_report_mean_is_checked(self) -> None:
        with pytest.raises(ValueError, match="does not match"):
            RelevanceReport(bleu=0.2, rouge=0.2, sari=0.2, semantic=0.2, mean=0.9)


class TestOverall:
    def test_arithmetic(self) -> None:
        fact = FactualityReport(
            strict=PRF(precision=0.37, recall=0.37, f1=0.37),
            lenient=PRF(precision=0.5, recall=0.5, f1=0.5),
        )
        rel = RelevanceReport(bleu=0.35, rouge=0.35, sari=0.35, semantic=0.35)
        assert round(overall_score(fact, rel).overall, 2) == 0.36

    def test_inconsistent_overall_is_rejected(self) -> None:
        fact = FactualityReport(strict=PRF(precision=1, recall=1, f1=1), lenient=PRF(precision=1, recall=1, f1=1))
        rel = RelevanceReport(bleu=0, rouge=0, sari=0, semantic=0)
        score = overall_score(fact, rel)
        with pytest.raises(ValueError, match="not"):
            type(score)(factuality=fact, relevance=rel, overall=0.9)

    def test_evaluate(self, case, hash_provider) -> None:
        answer = Answer(
            sentences=(case.text_of(1), case.text_of(2)),
            citations=(
                Citation(answer_sentence_index=0, cited_ids=frozenset({1})),
                Citation(answer_sentence_index=1, cited_ids=frozenset({2})),
            ),
        )
        score = evaluate({case.case_id: answer}, [case], hash_provider)
        assert score.factuality.strict.f1 == 1.0
        assert score.relevance.rouge == pytest.approx(1.0)
        assert score.overall == pytest.approx((1.0 + score.relevance.mean) / 2)
        assert set(score.per_case_relevance) == {case.case_id}


def test_labels_enum_values() -> None:
    assert [label.value for label in RelevanceLabel] == ["essential", "supplementary", "not-relevant", "unlabeled"]
