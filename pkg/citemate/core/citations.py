"""Inline citation grammar: ``He had a rupture |1|. Surgery used a graft |2, 3|.``

A citation block is a pair of vertical bars around a comma-separated list of
note sentence ids. It may sit right before the sentence terminator or after it.
"""

import re
from collections.abc import Collection
from logging import getLogger

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from citemate.core.config import settings

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

TERMINATORS = ".!?"
BLOCK_CONTENT = re.compile(r"^\s*\d+(?:\s*,\s*\d+)*\s*$")
BLOCK = re.compile(r"\|[^|]*\|")
WHITESPACE = re.compile(r"\s+")
SPACE_BEFORE_TERMINATOR = re.compile(r"\s+([.!?])")


class CitationParseError(ValueError):
    """Raised for unbalanced or malformed citation blocks.

    Attributes:
        offset (int): Byte offset of the offending ``|`` in the UTF-8 encoded input.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class NoValidAttributionError(ValueError):
    """Raised when no citation survives validation."""


class Citation(BaseModel):
    """The evidence ids cited by one answer sentence."""

    model_config = ConfigDict(frozen=True)

    answer_sentence_index: int = Field(..., ge=0)
    cited_ids: frozenset[int] = Field(..., min_length=1)

    @field_validator("cited_ids")
    @classmethod
    def validate_ids(cls, v: frozenset[int]) -> frozenset[int]:
        if any(i < 1 for i in v):
            raise ValueError("sentence ids are 1-based")
        return v


class Answer(BaseModel):
    """Answer sentences with citation markup stripped, plus their citations."""

    model_config = ConfigDict(frozen=True)

    sentences: tuple[str, ...]
    citations: tuple[Citation, ...] = ()

    @model_validator(mode="after")
    def validate_citations(self) -> "Answer":
        seen: set[int] = set()
        for citation in self.citations:
            index = citation.answer_sentence_index
            if index >= len(self.sentences):
                raise ValueError(
                    f"citation for sentence {index} but the answer has "
                    f"{len(self.sentences)} sentences"
                )
            if index in seen:
                raise ValueError(f"sentence {index} has more than one citation entry")
            seen.add(index)
        return self

    @property
    def text(self) -> str:
        return " ".join(self.sentences)

    @property
    def cited_ids(self) -> set[int]:
        """Union of the ids of all citation blocks."""
        return {i for c in self.citations for i in c.cited_ids}

    def citation_for(self, index: int) -> Citation | None:
        return next((c for c in self.citations if c.answer_sentence_index == index), None)


def _byte_offset(raw: str, position: int) -> int:
    return len(raw[:position].encode("utf-8"))


def _split_blocks(raw: str) -> list[str | set[int]]:
    """Split ``raw`` into text runs and parsed id blocks.

    Raises:
        CitationParseError: On an odd number of ``|`` or a block that is not an id list.
    """
    pipes = [i for i, ch in enumerate(raw) if ch == "|"]
    if len(pipes) % 2:
        raise CitationParseError("unbalanced '|'", _byte_offset(raw, pipes[-1]))
    pieces: list[str | set[int]] = []
    cursor = 0
    for start, end in zip(pipes[::2], pipes[1::2], strict=True):
        content = raw[start + 1 : end]
        if not BLOCK_CONTENT.match(content):
            raise CitationParseError(
                f"malformed citation block {raw[start : end + 1]!r}", _byte_offset(raw, start)
            )
        pieces.append(raw[cursor:start])
        pieces.append({int(i) for i in content.split(",")})
        cursor = end + 1
    pieces.append(raw[cursor:])
    return pieces


def _clean(text: str) -> str:
    return SPACE_BEFORE_TERMINATOR.sub(r"\1", WHITESPACE.sub(" ", text).strip())


def _segment(raw: str) -> list[tuple[str, set[int]]]:
    """Sentences of ``raw`` with the ids of the blocks that belong to them."""
    sentences: list[tuple[str, set[int]]] = []
    buffer: list[str] = []
    pending: set[int] = set()
    after_terminator = False

    def close() -> None:
        nonlocal pending
        text = _clean("".join(buffer))
        buffer.clear()
        if text:
            sentences.append((text, pending))
        elif pending and sentences:
            sentences[-1][1].update(pending)
        pending = set()

    for piece in _split_blocks(raw):
        if isinstance(piece, set):
            if after_terminator and sentences:
                sentences[-1][1].update(piece)
            else:
                pending |= piece
            continue
        for i, ch in enumerate(piece):
            if after_terminator and ch.isspace():
                continue
            after_terminator = False
            buffer.append(ch)
            if ch in TERMINATORS and (i + 1 == len(piece) or piece[i + 1].isspace()):
                close()
                after_terminator = True
    close()
    return sentences


def parse_citations(raw: str, valid_ids: Collection[int]) -> Answer:
    """Parse a generated answer with inline citation blocks.

    Args:
        raw: The model's full text output.
        valid_ids: Ids of the evidence shown to the model.

    Returns:
        Answer: Sentences without markup; ids outside ``valid_ids`` dropped.

    Raises:
        CitationParseError: If the block structure is unbalanced or malformed.
        NoValidAttributionError: If no sentence keeps a citation.
    """
    valid = set(valid_ids)
    sentences: list[str] = []
    citations: list[Citation] = []
    for index, (text, ids) in enumerate(_segment(raw)):
        sentences.append(text)
        dropped = ids - valid
        if dropped:
            logger.warning("Dropping citations %s outside the evidence", sorted(dropped))
        kept = ids & valid
        if kept:
            citations.append(Citation(answer_sentence_index=index, cited_ids=frozenset(kept)))
    if not citations:
        raise NoValidAttributionError("no valid attribution")
    return Answer(sentences=tuple(sentences), citations=tuple(citations))


def render_block(ids: Collection[int]) -> str:
    return "|" + ", ".join(str(i) for i in sorted(ids)) + "|"


def render_citations(answer: Answer) -> str:
    """Render ``answer`` as text with a block after each cited sentence."""
    parts = []
    for index, sentence in enumerate(answer.sentences):
        citation = answer.citation_for(index)
        parts.append(f"{sentence} {render_block(citation.cited_ids)}" if citation else sentence)
    return " ".join(parts)


def strip_citation_blocks(raw: str) -> str:
    """Remove well-formed blocks, leaving the prose."""
    return _clean(BLOCK.sub(" ", raw))


def count_words(raw: str) -> int:
    """Whitespace word count of ``raw`` with citation blocks excluded."""
    return len(strip_citation_blocks(raw).split())


def split_sentences(text: str) -> list[str]:
    """Split citation-free text into sentences with the same terminator rule."""
    return [sentence for sentence, _ in _segment(text.replace("|", " "))]
