import pytest
from fastapi.testclient import TestClient

from citemate.core.generation import (
    NARRATIVE_BEGIN,
    NOTE_BEGIN,
    QUESTION_BEGIN,
    AttributionMode,
    EchoClient,
    GenerationFailedError,
    HttpLlmClient,
    LlmUnavailableError,
    PromptError,
    PromptSpec,
    ScriptedClient,
    ScriptExhaustedError,
    Shots,
    Validity,
    build_prompt,
    client_from_spec,
    evidence_from_prompt,
    generate_valid,
    judge,
    mock_client,
)

EXEMPLAR = "His aortic aneurysm was caused by the rupture"
RETRIEVAL_ONE = PromptSpec(attribution_mode=AttributionMode.POST_RETRIEVAL, shots=Shots.ONE)
GENERATION_ONE = PromptSpec(attribution_mode=AttributionMode.POST_GENERATION, shots=Shots.ONE)


@pytest.fixture
def evidence(case) -> list[tuple[int, str]]:
    return [(i, case.text_of(i)) for i in (2, 4)]


class TestPrompt:
    def test_post_retrieval_one_shot(self, case, evidence) -> None:
        prompt = build_prompt(RETRIEVAL_ONE, case, evidence)
        assert EXEMPLAR in prompt
        assert "intervention |1|." in prompt
        assert "Mandatory Citation Inclusion" in prompt

    def test_post_generation_has_no_citation_rules(self, case, evidence) -> None:
        prompt = build_prompt(GENERATION_ONE, case, evidence)
        assert EXEMPLAR in prompt
        assert "|1|" not in prompt
        assert "Mandatory Citation Inclusion" not in prompt

    def test_zero_shot_has_no_example(self, case, evidence) -> None:
        spec = PromptSpec(attribution_mode=AttributionMode.POST_RETRIEVAL, shots=Shots.ZERO)
        assert EXEMPLAR not in build_prompt(spec, case, evidence)

    def test_section_order_and_original_ids(self, case, evidence) -> None:
        prompt = build_prompt(RETRIEVAL_ONE, case, evidence)
        assert prompt.index(NOTE_BEGIN) < prompt.index(NARRATIVE_BEGIN) < prompt.index(QUESTION_BEGIN)
        assert f"2: {case.text_of(2)}" in prompt
        assert f"4: {case.text_of(4)}" in prompt
        assert evidence_from_prompt(prompt) == evidence

    def test_deterministic_and_injective(self, case, evidence) -> None:
        assert build_prompt(RETRIEVAL_ONE, case, evidence) == build_prompt(RETRIEVAL_ONE, case, evidence)
        assert build_prompt(RETRIEVAL_ONE, case, evidence) != build_prompt(RETRIEVAL_ONE, case, evidence[:1])
        assert build_prompt(RETRIEVAL_ONE, case, evidence) != build_prompt(GENERATION_ONE, case, evidence)

    def test_empty_evidence(self, case) -> None:
        with pytest.raises(PromptError):
            build_prompt(RETRIEVAL_ONE, case, [])

    def test_spec_bounds(self) -> None:
        with pytest.raises(ValueError):
            PromptSpec(max_tokens=0)
        with pytest.raises(ValueError):
            PromptSpec(temperature=-0.1)
        assert PromptSpec().max_tokens == 200


class TestJudge:
    def test_valid(self) -> None:
        validity, answer, _ = judge("Repair was emergent |2|.", RETRIEVAL_ONE, [2, 4], 75)
        assert validity is Validity.VALID
        assert answer.cited_ids == {2}

    def test_no_citation(self) -> None:
        assert judge("Repair was emergent.", RETRIEVAL_ONE, [2], 75)[0] is Validity.NO_CITATION

    def test_parse_error(self) -> None:
        assert judge("Repair |2. was emergent.", RETRIEVAL_ONE, [2], 75)[0] is Validity.PARSE_ERROR

    def test_too_long(self) -> None:
        raw = " ".join(["word"] * 80) + " |2|."
        validity, _, detail = judge(raw, RETRIEVAL_ONE, [2], 75)
        assert validity is Validity.TOO_LONG
        assert "80 words" in detail

    def test_truncated_output(self) -> None:
        validity, _, detail = judge("Repair was emergent |2|. He then", RETRIEVAL_ONE, [2], 75)
        assert validity is Validity.TOO_LONG
        assert "mid-sentence" in detail

    def test_post_generation_needs_no_citation(self) -> None:
        validity, answer, _ = judge("Repair was emergent. It worked.", GENERATION_ONE, [2], 75)
        assert validity is Validity.VALID
        assert answer.sentences == ("Repair was emergent.", "It worked.")
        assert answer.citations == ()


class TestRetryLoop:
    def test_five_invalid_outputs(self, case, evidence) -> None:
        client = ScriptedClient(["No citation here."] * 5)
        with pytest.raises(GenerationFailedError) as exc:
            generate_valid(client, RETRIEVAL_ONE, case, evidence)
        attempts = exc.value.attempts
        assert [a.attempt_number for a in attempts] == [1, 2, 3, 4, 5]
        assert {a.validity for a in attempts} == {Validity.NO_CITATION}
        assert client.calls == 5

    def test_two_invalid_then_valid(self, case, evidence) -> None:
        client = ScriptedClient(["Nothing.", "Broken |2.", "The repair was emergent |2|."])
        result = generate_valid(client, RETRIEVAL_ONE, case, evidence)
        assert len(result.attempts) == 3
        assert [a.validity for a in result.attempts] == [
            Validity.NO_CITATION,
            Validity.PARSE_ERROR,
            Validity.VALID,
        ]
        assert result.answer.cited_ids == {2}

    def test_first_output_valid(self, case, evidence) -> None:
        result = generate_valid(ScriptedClient(["Fine |4|."]), RETRIEVAL_ONE, case, evidence)
        assert len(result.attempts) == 1

    def test_script_exhausted(self, case, evidence) -> None:
        with pytest.raises(ScriptExhaustedError):
            generate_valid(ScriptedClient(["Nope."]), RETRIEVAL_ONE, case, evidence, max_attempts=2)


class TestEcho:
    def test_cites_every_evidence_sentence(self, case, evidence) -> None:
        result = generate_valid(EchoClient(), RETRIEVAL_ONE, case, evidence)
        assert result.answer.cited_ids == {2, 4}
        assert result.answer.sentences == (case.text_of(2), case.text_of(4))

    def test_whole_note_is_exempt_from_the_word_cap(self, case) -> None:
        evidence = [(i, case.text_of(i)) for i in case.sentence_ids]
        raw = EchoClient(evidence).complete("ignored", RETRIEVAL_ONE)
        assert judge(raw, RETRIEVAL_ONE, case.sentence_ids, 10)[0] is Validity.TOO_LONG
        result = generate_valid(EchoClient(), RETRIEVAL_ONE, case, evidence, word_limit=10)
        assert result.answer.cited_ids == set(case.sentence_ids)
        assert len(result.attempts) == 1

    def test_scripted_client_keeps_the_word_cap(self, case, evidence) -> None:
        long_answer = " ".join(["word"] * 20) + " |2|."
        with pytest.raises(GenerationFailedError):
            generate_valid(ScriptedClient([long_answer] * 5), RETRIEVAL_ONE, case, evidence, word_limit=10)

    def test_post_generation_output_has_no_blocks(self, case, evidence) -> None:
        raw = EchoClient(evidence).complete("ignored", GENERATION_ONE)
        assert "|" not in raw

    def test_mock_client(self) -> None:
        assert isinstance(mock_client("echo"), EchoClient)
        assert isinstance(mock_client("scripted", responses=["a."]), ScriptedClient)
        with pytest.raises(ValueError, match="Unsupported mock client"):
            mock_client("parrot")

    def test_client_from_spec(self) -> None:
        assert isinstance(client_from_spec("mock:echo"), EchoClient)
        assert isinstance(client_from_spec("https://llm.example/complete"), HttpLlmClient)
        with pytest.raises(ValueError, match="Unsupported LLM endpoint"):
            client_from_spec("ftp://llm.example")


class TestHttpClient:
    def test_request_contract(self, app, http: TestClient, case, evidence) -> None:
        app.state.replies = ["The repair was emergent |2|."]
        client = HttpLlmClient("http://testserver/complete", model="m", token="tok", client=http)
        result = generate_valid(client, RETRIEVAL_ONE, case, evidence)
        assert result.answer.cited_ids == {2}
        body, auth = app.state.requests[-1]
        assert body["model"] == "m"
        assert body["max_tokens"] == 200
        assert body["temperature"] == 0.001
        assert body["prompt"] == build_prompt(RETRIEVAL_ONE, case, evidence)
        assert auth == "Bearer tok"

    def test_unavailable_after_an_invalid_attempt(self, app, http: TestClient, case, evidence) -> None:
        app.state.replies = ["No citation."]
        client = HttpLlmClient("http://testserver/complete", client=http)
        with pytest.raises(LlmUnavailableError) as exc:
            generate_valid(client, RETRIEVAL_ONE, case, evidence)
        assert len(exc.value.attempts) == 1
        assert exc.value.attempts[0].validity is Validity.NO_CITATION

    def test_close_leaves_injected_client_open(self, app, http: TestClient, case, evidence) -> None:
        app.state.replies = ["Fine |2|."]
        with HttpLlmClient("http://testserver/complete", client=http) as client:
            generate_valid(client, RETRIEVAL_ONE, case, evidence)
        assert not http.is_closed

    def test_close_owned_client(self) -> None:
        client = HttpLlmClient("http://llm.example/complete")
        client.close()
        assert client._client.is_closed
