"""
Entity mentions, the entity to sentence to paragraph index, and entity scores.
"""

import bisect
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence

from .attnscore import ScoreSheet
from .backend import BackendFailure
from .constants import DEFAULT_SPACY_MODEL, SENTENCE_INITIAL_STOPWORDS
from .corpus import CharSpan, SegmentedDocument

logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class Mention:
    """A recognized span; offsets are relative to the text given to the recognizer."""

    text: str
    start: int
    end: int
    label: str = ""


class Recognizer(Protocol):
    def recognize(self, text: str) -> list[Mention]: ...


def canonical_form(surface: str) -> str:
    return _WHITESPACE.sub(" ", surface).strip().casefold()


@dataclass(frozen=True)
class Entity:
    canonical: str
    mentions: tuple[tuple[int, CharSpan], ...]

    @property
    def sentence_indices(self) -> list[int]:
        return sorted({sentence for sentence, _ in self.mentions})


@dataclass(frozen=True)
class EntityIndex:
    """Entities by canonical form, with the sentences and paragraphs that name them."""

    entities: tuple[Entity, ...]
    sentence_to_entities: dict
    paragraph_to_entities: dict

    def __len__(self) -> int:
        return len(self.entities)

    def get(self, entity_id: str) -> Entity:
        for entity in self.entities:
            if entity.canonical == entity_id:
                return entity
        raise KeyError(entity_id)

    def paragraphs_of(self, entity_id: str) -> list[int]:
        return sorted(
            p for p, ids in self.paragraph_to_entities.items() if entity_id in ids
        )

    def to_json(self) -> dict:
        return {
            "entities": [
                {
                    "canonical": entity.canonical,
                    "mentions": [
                        {"sentence": s, "span": list(span)}
                        for s, span in entity.mentions
                    ],
                }
                for entity in self.entities
            ]
        }

    @classmethod
    def from_json(cls, data: dict, doc: SegmentedDocument) -> "EntityIndex":
        entities = [
            Entity(
                canonical=item["canonical"],
                mentions=tuple(
                    (m["sentence"], tuple(m["span"])) for m in item["mentions"]
                ),
            )
            for item in data.get("entities", [])
        ]
        return build_index(entities, doc)


@dataclass(frozen=True)
class EntityScores:
    kind: str
    scores: dict

    def __len__(self) -> int:
        return len(self.scores)


class CapitalizedSpanRecognizer:
    """
    Rule-based recognizer: maximal runs of capitalized words.

    A run made of one sentence-initial function word ("The", "However") is not
    a mention.
    """

    _SPAN = re.compile(r"\b[A-Z][\w'’-]*(?:[ \t]+[A-Z][\w'’-]*)*")

    def __init__(self, stopwords: Iterable[str] = SENTENCE_INITIAL_STOPWORDS):
        self.stopwords = frozenset(stopwords)

    def recognize(self, text: str) -> list[Mention]:
        mentions = []
        for match in self._SPAN.finditer(text):
            surface = match.group()
            if " " not in surface and "\t" not in surface and surface in self.stopwords:
                continue
            mentions.append(Mention(surface, match.start(), match.end(), "CAPS"))
        return mentions


class SpacyRecognizer:
    """Named entities from a spaCy pipeline, optionally restricted to some labels."""

    def __init__(
        self, model: str = DEFAULT_SPACY_MODEL, labels: Optional[Sequence[str]] = None
    ):
        try:
            import spacy
        except ImportError as e:
            raise BackendFailure(
                "The spaCy recognizer needs the 'models' extra: "
                "pip install longdoc-retrieval[models]"
            ) from e
        try:
            self._nlp = spacy.load(model, disable=["lemmatizer"])
        except OSError as e:
            raise BackendFailure(f"Cannot load spaCy model {model}: {e}") from e
        self.model = model
        self.labels = frozenset(labels) if labels else None

    def recognize(self, text: str) -> list[Mention]:
        return [
            Mention(ent.text, ent.start_char, ent.end_char, ent.label_)
            for ent in self._nlp(text).ents
            if self.labels is None or ent.label_ in self.labels
        ]


def build_index(entities: Sequence[Entity], doc: SegmentedDocument) -> EntityIndex:
    sentence_to_entities: dict[int, set] = {}
    paragraph_to_entities: dict[int, set] = {}
    for entity in entities:
        for sentence_index, _ in entity.mentions:
            if not 0 <= sentence_index < len(doc.sentences):
                raise ValueError(
                    f"Entity {entity.canonical!r} mentions unknown sentence "
                    f"{sentence_index}"
                )
            paragraph_index = doc.sentences[sentence_index].paragraph_index
            sentence_to_entities.setdefault(sentence_index, set()).add(entity.canonical)
            paragraph_to_entities.setdefault(paragraph_index, set()).add(
                entity.canonical
            )
    return EntityIndex(
        entities=tuple(entities),
        sentence_to_entities={
            s: frozenset(ids) for s, ids in sentence_to_entities.items()
        },
        paragraph_to_entities={
            p: frozenset(ids) for p, ids in paragraph_to_entities.items()
        },
    )


def extract_entities(doc: SegmentedDocument, recognizer: Recognizer) -> EntityIndex:
    """
    Run the recognizer over each paragraph and group mentions by canonical form.

    A mention belongs to the sentence containing its first character; mentions
    outside every sentence are dropped.
    """
    sentence_starts = [s.char_span[0] for s in doc.sentences]
    grouped: dict[str, list] = {}
    for paragraph in doc.paragraphs:
        offset = paragraph.char_span[0]
        for mention in recognizer.recognize(doc.paragraph_text(paragraph.index)):
            start, end = mention.start + offset, mention.end + offset
            position = bisect.bisect_right(sentence_starts, start) - 1
            if position < 0 or start >= doc.sentences[position].char_span[1]:
                logger.debug(
                    f"Mention {mention.text!r} at {start} lies outside every sentence"
                )
                continue
            canonical = canonical_form(mention.text)
            if canonical:
                grouped.setdefault(canonical, []).append((position, (start, end)))

    entities = [
        Entity(canonical, tuple(mentions)) for canonical, mentions in grouped.items()
    ]
    logger.debug(f"Indexed {len(entities)} entities in {doc.doc_id or 'document'}")
    return build_index(entities, doc)


def entity_scores(index: EntityIndex, sheet: ScoreSheet) -> EntityScores:
    """Score each entity by the mean score of the distinct sentences mentioning it."""
    scores = {}
    for entity in index.entities:
        sentences = entity.sentence_indices
        total = sum(sheet.scores[s] for s in sentences)
        scores[entity.canonical] = total / len(sentences)
    return EntityScores(sheet.kind, scores)
