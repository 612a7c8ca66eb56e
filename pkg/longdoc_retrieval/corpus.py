"""
Document segmentation, token alignment and dataset loading.

A document is split into paragraphs at blank lines and into sentences at
terminal punctuation. Character spans are half-open ``[start, end)`` offsets
into the raw text; token spans are inclusive ``[first, last]`` token indices.
"""

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Protocol, Sequence

from .constants import ABBREVIATIONS, CLOSING_CHARS, TERMINAL_PUNCTUATION

logger = logging.getLogger(__name__)

# One newline followed by at least one more (possibly indented) newline
_PARAGRAPH_BREAK = re.compile(r"\n[^\S\n]*(?:\n[^\S\n]*)+")

CharSpan = tuple[int, int]
TokenSpan = tuple[int, int]


class InputError(Exception):
    """Base class for errors caused by invalid documents, datasets or settings."""

    pass


class EmptyDocument(InputError):
    """Raised when a document has no content after whitespace normalization."""

    pass


class AlignmentGap(InputError):
    """Raised when a sentence or paragraph maps to no tokens."""

    pass


class SchemaError(InputError):
    """Raised when a dataset record is malformed."""

    def __init__(self, message: str, record_number: Optional[int] = None):
        self.record_number = record_number
        if record_number is not None:
            message = f"record {record_number}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SegmentationConfig:
    """Rules for splitting paragraphs into sentences."""

    terminal_punctuation: str = TERMINAL_PUNCTUATION
    closing_chars: str = CLOSING_CHARS
    abbreviations: frozenset = ABBREVIATIONS


@dataclass(frozen=True)
class Paragraph:
    index: int
    char_span: CharSpan


@dataclass(frozen=True)
class Sentence:
    index: int
    paragraph_index: int
    char_span: CharSpan


@dataclass(frozen=True)
class SegmentedDocument:
    """Paragraph and sentence structure of one document."""

    doc_id: str
    raw_text: str
    paragraphs: tuple[Paragraph, ...]
    sentences: tuple[Sentence, ...]

    def paragraph_text(self, index: int) -> str:
        start, end = self.paragraphs[index].char_span
        return self.raw_text[start:end]

    def sentence_text(self, index: int) -> str:
        start, end = self.sentences[index].char_span
        return self.raw_text[start:end]

    def sentence_texts(self) -> list[str]:
        return [self.sentence_text(s.index) for s in self.sentences]

    def sentences_in_paragraph(self, index: int) -> list[int]:
        return [s.index for s in self.sentences if s.paragraph_index == index]

    @property
    def word_count(self) -> int:
        return len(self.raw_text.split())

    def validate(self) -> None:
        """Check the containment invariants, raising ValueError on violation."""
        previous_end = 0
        for i, paragraph in enumerate(self.paragraphs):
            start, end = paragraph.char_span
            if paragraph.index != i:
                raise ValueError(
                    "Paragraph indices must be contiguous, "
                    f"got {paragraph.index} at {i}"
                )
            if not (previous_end <= start < end <= len(self.raw_text)):
                raise ValueError(
                    f"Paragraph {i} span {paragraph.char_span} "
                    "is out of order or bounds"
                )
            previous_end = end
        for i, sentence in enumerate(self.sentences):
            if sentence.index != i:
                raise ValueError(
                    f"Sentence indices must be contiguous, got {sentence.index} at {i}"
                )
            p_start, p_end = self.paragraphs[sentence.paragraph_index].char_span
            start, end = sentence.char_span
            if not (p_start <= start < end <= p_end):
                raise ValueError(
                    f"Sentence {i} is not inside paragraph {sentence.paragraph_index}"
                )


class QueryType(str, Enum):
    SINGLE_HOP = "single_hop"
    COMPARISON = "comparison"
    COMPOSITION = "composition"
    SUMMARIZATION = "summarization"
    UNSPECIFIED = "unspecified"

    @classmethod
    def parse(cls, value: Optional[str]) -> "QueryType":
        if value is None:
            return cls.UNSPECIFIED
        normalized = value.strip().lower().replace("-", "_").replace(" ", "_")
        try:
            return cls(normalized)
        except ValueError:
            raise ValueError(f"Unknown query type: {value}")


@dataclass(frozen=True)
class Subquery:
    text: str
    gold_paragraph_indices: frozenset


@dataclass(frozen=True)
class RetrievalSample:
    sample_id: str
    document: SegmentedDocument
    query: str
    gold_paragraph_indices: frozenset = frozenset()
    query_type: QueryType = QueryType.UNSPECIFIED
    subquery_gold: Optional[tuple[Subquery, ...]] = None


@dataclass(frozen=True)
class Encoding:
    """Token ids and their character offsets into the encoded text."""

    ids: tuple[int, ...]
    offsets: tuple[CharSpan, ...]
    text: str = ""

    def __len__(self) -> int:
        return len(self.ids)


class Tokenizer(Protocol):
    """Anything that turns text into tokens with character offsets."""

    tokenizer_id: str

    def encode(self, text: str) -> Encoding: ...


@dataclass(frozen=True)
class TokenAlignment:
    tokenizer_id: str
    doc_token_count: int
    query_token_count: int
    sentence_token_spans: tuple[TokenSpan, ...]
    paragraph_token_spans: tuple[TokenSpan, ...]


@dataclass(frozen=True)
class DatasetStatistics:
    size: int
    avg_length: float
    max_length: int
    avg_paragraph_count: float
    max_paragraph_count: int
    avg_evidences: float

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "avg_length": round(self.avg_length, 2),
            "max_length": self.max_length,
            "avg_paragraph_count": round(self.avg_paragraph_count, 2),
            "max_paragraph_count": self.max_paragraph_count,
            "avg_evidences": round(self.avg_evidences, 2),
        }


def _strip_span(text: str, start: int, end: int) -> CharSpan:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def _is_sentence_end(
    text: str, i: int, start: int, limit: int, rules: SegmentationConfig
) -> Optional[int]:
    """Return the end offset of a sentence closing at ``text[i]``, if it closes one.

    ``i`` points at terminal punctuation. Closing quotes and brackets directly
    after it stay with the sentence; the boundary needs whitespace (or
    ``limit``, the end of the paragraph) after them.
    """
    end = i + 1
    while end < limit and text[end] in rules.closing_chars:
        end += 1
    if end < limit and not text[end].isspace():
        return None
    if text[i] == ".":
        word_start = i
        while word_start > start and not text[word_start - 1].isspace():
            word_start -= 1
        word = text[word_start:i + 1].lower().lstrip("\"'([{‘“")
        if word in rules.abbreviations:
            return None
    return end


def _split_sentences(
    text: str, start: int, end: int, rules: SegmentationConfig
) -> list[CharSpan]:
    spans = []
    sentence_start = start
    i = start
    while i < end:
        if text[i] in rules.terminal_punctuation:
            close = _is_sentence_end(text, i, sentence_start, end, rules)
            if close is not None:
                span = _strip_span(text, sentence_start, close)
                if span[0] < span[1]:
                    spans.append(span)
                sentence_start = close
                i = close
                continue
        i += 1
    span = _strip_span(text, sentence_start, end)
    if span[0] < span[1]:
        spans.append(span)
    return spans


def _paragraph_spans(text: str) -> list[CharSpan]:
    spans = []
    cursor = 0
    for match in _PARAGRAPH_BREAK.finditer(text):
        spans.append(_strip_span(text, cursor, match.start()))
        cursor = match.end()
    spans.append(_strip_span(text, cursor, len(text)))
    return [span for span in spans if span[0] < span[1]]


def _build_document(
    doc_id: str,
    raw_text: str,
    paragraph_spans: Sequence[CharSpan],
    rules: SegmentationConfig,
) -> SegmentedDocument:
    paragraphs = []
    sentences = []
    for p_index, (start, end) in enumerate(paragraph_spans):
        paragraphs.append(Paragraph(index=p_index, char_span=(start, end)))
        for span in _split_sentences(raw_text, start, end, rules):
            sentences.append(
                Sentence(index=len(sentences), paragraph_index=p_index, char_span=span)
            )
    return SegmentedDocument(
        doc_id=doc_id,
        raw_text=raw_text,
        paragraphs=tuple(paragraphs),
        sentences=tuple(sentences),
    )


def segment_document(
    raw_text: str, rules: Optional[SegmentationConfig] = None, doc_id: str = ""
) -> SegmentedDocument:
    """
    Segment raw text into paragraphs and sentences.

    Args:
        raw_text: The document text.
        rules: Sentence segmentation rules; defaults apply when omitted.
        doc_id: Identifier stored on the result.

    Returns:
        The segmented document. Spans index into ``raw_text`` unchanged.

    Raises:
        EmptyDocument: If the text is empty or whitespace only.
    """
    if not raw_text or not raw_text.strip():
        raise EmptyDocument(f"Document {doc_id or '<anonymous>'} is empty")
    rules = rules or SegmentationConfig()
    document = _build_document(doc_id, raw_text, _paragraph_spans(raw_text), rules)
    logger.debug(
        f"Segmented {doc_id or 'document'}: {len(document.paragraphs)} paragraphs, "
        f"{len(document.sentences)} sentences"
    )
    return document


def document_from_paragraphs(
    doc_id: str,
    paragraphs: Sequence[str],
    rules: Optional[SegmentationConfig] = None,
) -> SegmentedDocument:
    """
    Build a document from an explicit paragraph list.

    Paragraphs are joined with a blank line, and each one becomes exactly one
    paragraph even if its own text contains blank lines.

    Raises:
        EmptyDocument: If the list is empty or any paragraph is blank.
    """
    if not paragraphs:
        raise EmptyDocument(f"Document {doc_id} has no paragraphs")
    rules = rules or SegmentationConfig()
    pieces = []
    spans = []
    cursor = 0
    for i, text in enumerate(paragraphs):
        if not text.strip():
            raise EmptyDocument(f"Paragraph {i} of document {doc_id} is empty")
        if pieces:
            pieces.append("\n\n")
            cursor += 2
        spans.append(_strip_span(text, 0, len(text)))
        spans[-1] = (spans[-1][0] + cursor, spans[-1][1] + cursor)
        pieces.append(text)
        cursor += len(text)
    return _build_document(doc_id, "".join(pieces), spans, rules)


def covering_tokens(
    offsets: Sequence[CharSpan], start: int, end: int
) -> Optional[TokenSpan]:
    """Smallest inclusive token range overlapping ``[start, end)``.

    Zero-width tokens are skipped.
    """
    first = last = None
    for t, (tok_start, tok_end) in enumerate(offsets):
        if tok_start == tok_end:
            continue
        if tok_start < end and tok_end > start:
            if first is None:
                first = t
            last = t
        elif tok_start >= end:
            break
    if first is None:
        return None
    return first, last


def align_encoding(
    doc: SegmentedDocument,
    encoding: Encoding,
    query_token_count: int,
    tokenizer_id: str,
) -> TokenAlignment:
    """Align sentences and paragraphs of ``doc`` with an encoding of its text."""
    sentence_spans = []
    for sentence in doc.sentences:
        span = covering_tokens(encoding.offsets, *sentence.char_span)
        if span is None:
            raise AlignmentGap(
                f"Sentence {sentence.index} of {doc.doc_id or 'document'} "
                f"({doc.sentence_text(sentence.index)!r}) covers no tokens"
            )
        sentence_spans.append(span)
    paragraph_spans = []
    for paragraph in doc.paragraphs:
        span = covering_tokens(encoding.offsets, *paragraph.char_span)
        if span is None:
            raise AlignmentGap(
                f"Paragraph {paragraph.index} of {doc.doc_id or 'document'} "
                "covers no tokens"
            )
        paragraph_spans.append(span)
    return TokenAlignment(
        tokenizer_id=tokenizer_id,
        doc_token_count=len(encoding),
        query_token_count=query_token_count,
        sentence_token_spans=tuple(sentence_spans),
        paragraph_token_spans=tuple(paragraph_spans),
    )


def align_tokens(
    doc: SegmentedDocument, query: str, tokenizer: Tokenizer
) -> TokenAlignment:
    """
    Map every sentence and paragraph to the smallest token range covering it.

    Tokens straddling a boundary belong to every unit they overlap.

    Raises:
        AlignmentGap: If a unit covers no token.
    """
    encoding = tokenizer.encode(doc.raw_text)
    query_tokens = len(tokenizer.encode(query))
    return align_encoding(doc, encoding, query_tokens, tokenizer.tokenizer_id)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _parse_gold(
    value, record_number: int, field_name: str, paragraph_count: int
) -> frozenset:
    if not isinstance(value, list) or not all(_is_int(i) for i in value):
        raise SchemaError(f"'{field_name}' must be a list of integers", record_number)
    for index in value:
        if not 0 <= index < paragraph_count:
            raise SchemaError(
                f"gold index {index} in '{field_name}' "
                f"is outside 0..{paragraph_count - 1}",
                record_number,
            )
    return frozenset(value)


def parse_record(
    record: dict, record_number: int, rules: Optional[SegmentationConfig] = None
) -> RetrievalSample:
    """Turn one canonical record into a sample.

    Raises:
        SchemaError: Carrying ``record_number`` when the record is malformed.
    """
    if not isinstance(record, dict):
        raise SchemaError("record must be a JSON object", record_number)
    for key in ("id", "query", "gold"):
        if key not in record:
            raise SchemaError(f"missing '{key}'", record_number)
    if not isinstance(record["query"], str) or not record["query"].strip():
        raise SchemaError("'query' must be a non-empty string", record_number)

    sample_id = str(record["id"])
    try:
        if "paragraphs" in record:
            paragraphs = record["paragraphs"]
            if not isinstance(paragraphs, list) or not all(
                isinstance(p, str) for p in paragraphs
            ):
                raise SchemaError(
                    "'paragraphs' must be a list of strings", record_number
                )
            document = document_from_paragraphs(sample_id, paragraphs, rules)
        elif "document" in record:
            if not isinstance(record["document"], str):
                raise SchemaError("'document' must be a string", record_number)
            document = segment_document(record["document"], rules, doc_id=sample_id)
        else:
            raise SchemaError("record needs 'paragraphs' or 'document'", record_number)
    except EmptyDocument as e:
        raise SchemaError(str(e), record_number) from e

    paragraph_count = len(document.paragraphs)
    gold = _parse_gold(record["gold"], record_number, "gold", paragraph_count)

    try:
        query_type = QueryType.parse(record.get("type"))
    except ValueError as e:
        raise SchemaError(str(e), record_number) from e

    subqueries = None
    if record.get("subqueries") is not None:
        raw_subqueries = record["subqueries"]
        if not isinstance(raw_subqueries, list):
            raise SchemaError("'subqueries' must be a list", record_number)
        parsed = []
        for j, item in enumerate(raw_subqueries):
            if not (
                isinstance(item, dict)
                and isinstance(item.get("q"), str)
                and "gold" in item
            ):
                raise SchemaError(f"subquery {j} needs 'q' and 'gold'", record_number)
            sub_gold = _parse_gold(
                item["gold"], record_number, f"subqueries[{j}].gold", paragraph_count
            )
            parsed.append(Subquery(text=item["q"], gold_paragraph_indices=sub_gold))
        subqueries = tuple(parsed)

    return RetrievalSample(
        sample_id=sample_id,
        document=document,
        query=record["query"],
        gold_paragraph_indices=gold,
        query_type=query_type,
        subquery_gold=subqueries,
    )


def load_dataset(
    path: str,
    format: str = "canonical_jsonl",
    rules: Optional[SegmentationConfig] = None,
) -> list[RetrievalSample]:
    """
    Load retrieval samples from a canonical JSONL file.

    Args:
        path: File with one JSON record per line (blank lines are skipped).
        format: Only ``canonical_jsonl`` is supported.
        rules: Sentence segmentation rules.

    Returns:
        Samples in file order.

    Raises:
        SchemaError: On any malformed record, with the 1-based line number.
    """
    if format != "canonical_jsonl":
        raise ValueError(f"Unsupported dataset format: {format}")
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", line_number) from e
            samples.append(parse_record(record, line_number, rules))
    logger.info(f"Loaded {len(samples)} samples from {path}")
    return samples


def sample_to_record(sample: RetrievalSample) -> dict:
    record = {
        "id": sample.sample_id,
        "paragraphs": [
            sample.document.paragraph_text(p.index) for p in sample.document.paragraphs
        ],
        "query": sample.query,
        "gold": sorted(sample.gold_paragraph_indices),
    }
    if sample.query_type is not QueryType.UNSPECIFIED:
        record["type"] = sample.query_type.value
    if sample.subquery_gold is not None:
        record["subqueries"] = [
            {"q": sub.text, "gold": sorted(sub.gold_paragraph_indices)}
            for sub in sample.subquery_gold
        ]
    return record


def save_dataset(samples: Iterable[RetrievalSample], path: str) -> int:
    """Write samples as canonical JSONL and return the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample_to_record(sample), ensure_ascii=False) + "\n")
            count += 1
    return count


def dataset_statistics(samples: Sequence[RetrievalSample]) -> DatasetStatistics:
    """Summarize size, word lengths, paragraph counts and evidence counts."""
    if not samples:
        return DatasetStatistics(0, 0.0, 0, 0.0, 0, 0.0)
    lengths = [s.document.word_count for s in samples]
    paragraph_counts = [len(s.document.paragraphs) for s in samples]
    evidences = [len(s.gold_paragraph_indices) for s in samples]
    n = len(samples)
    return DatasetStatistics(
        size=n,
        avg_length=sum(lengths) / n,
        max_length=max(lengths),
        avg_paragraph_count=sum(paragraph_counts) / n,
        max_paragraph_count=max(paragraph_counts),
        avg_evidences=sum(evidences) / n,
    )

