"""
Fuse the attention and embedding views into a retrieved paragraph set.

Neither view's scores are ever compared with the other's: each view picks its
own top sentences and entities by rank, and the picks are joined by union.
Every selected sentence contributes its paragraph and every selected entity
contributes all paragraphs that mention it.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .attnscore import ScoreSheet, score_long_document
from .backend import AttentionBackend, EmbeddingBackend
from .config import (
    PipelineConfig,
    build_attention_backend,
    build_embedding_backend,
    build_recognizer,
)
from .corpus import InputError, RetrievalSample, SegmentedDocument
from .embscore import sentence_embedding_scores
from .entity import (
    EntityIndex,
    EntityScores,
    Recognizer,
    build_index,
    entity_scores,
    extract_entities,
)
from .longcontext import LongContextConfig

logger = logging.getLogger(__name__)


class InvalidK(InputError):
    """Raised when a top-k value is below 1."""

    pass


def view_quotas(k: int, views: str = "both") -> tuple[int, int]:
    """
    Picks per category for the attention and the embedding view.

    Both views split k as ceil(k/2) and floor(k/2); a single active view takes
    all k.
    """
    if k < 1:
        raise InvalidK(f"k must be at least 1, got {k}")
    if views == "attention":
        return k, 0
    if views == "embedding":
        return 0, k
    return math.ceil(k / 2), k // 2


def _top_sentences(sheet: Optional[ScoreSheet], count: int) -> list[int]:
    if sheet is None or count == 0:
        return []
    order = sorted(range(len(sheet.scores)), key=lambda i: (-sheet.scores[i], i))
    return order[:count]


def _top_entities(scores: Optional[EntityScores], count: int) -> list[str]:
    if scores is None or count == 0:
        return []
    order = sorted(scores.scores, key=lambda e: (-scores.scores[e], e))
    return order[:count]


@dataclass(frozen=True)
class Selection:
    sentences: frozenset
    entities: frozenset
    per_view_picks: dict = field(default_factory=dict)


def select_topk(
    attn: Optional[ScoreSheet],
    emb: Optional[ScoreSheet],
    ent_attn: Optional[EntityScores],
    ent_emb: Optional[EntityScores],
    k: int,
    views: str = "both",
) -> Selection:
    """
    Pick the top sentences and entities of each view and join them.

    Ties go to the lower sentence index and to the lexicographically smaller
    entity. Passing no entity scores selects no entities.

    Raises:
        InvalidK: If k < 1.
    """
    k_attention, k_embedding = view_quotas(k, views)
    picks = {
        "attention": {
            "sentences": _top_sentences(attn, k_attention),
            "entities": _top_entities(ent_attn, k_attention),
        },
        "embedding": {
            "sentences": _top_sentences(emb, k_embedding),
            "entities": _top_entities(ent_emb, k_embedding),
        },
    }
    sentences = frozenset(
        picks["attention"]["sentences"] + picks["embedding"]["sentences"]
    )
    entities = frozenset(
        picks["attention"]["entities"] + picks["embedding"]["entities"]
    )
    return Selection(sentences, entities, picks)


@dataclass(frozen=True)
class RetrievalResult:
    selected_sentences: frozenset
    selected_entities: frozenset
    paragraphs: tuple[int, ...]
    per_view_picks: dict
    k: int

    def to_json(self) -> dict:
        return {
            "paragraphs": list(self.paragraphs),
            "sentences": sorted(self.selected_sentences),
            "entities": sorted(self.selected_entities),
            "views": self.per_view_picks,
            "k": self.k,
        }


def expand_to_paragraphs(
    selection: Selection, doc: SegmentedDocument, index: EntityIndex, k: int = 0
) -> RetrievalResult:
    """
    Paragraphs of the selected sentences plus every paragraph mentioning a
    selected entity, in document order.
    """
    paragraphs = {doc.sentences[s].paragraph_index for s in selection.sentences}
    for paragraph, ids in index.paragraph_to_entities.items():
        if ids & selection.entities:
            paragraphs.add(paragraph)
    return RetrievalResult(
        selected_sentences=selection.sentences,
        selected_entities=selection.entities,
        paragraphs=tuple(sorted(paragraphs)),
        per_view_picks=selection.per_view_picks,
        k=k,
    )


@dataclass(frozen=True)
class IndexedSample:
    """Everything retrieval needs that does not depend on k."""

    sample: RetrievalSample
    attention: Optional[ScoreSheet]
    embedding: Optional[ScoreSheet]
    entities: EntityIndex
    entity_attention: Optional[EntityScores]
    entity_embedding: Optional[EntityScores]


class Retriever:
    """
    Runs the retrieval pipeline with a fixed set of backends.

    ``index`` does the expensive, k-independent work for a sample; ``select``
    turns an indexed sample into a result for one k, so a top-k sweep needs a
    single indexing pass.
    """

    def __init__(
        self,
        attention_backend: Optional[AttentionBackend],
        embedding_backend: Optional[EmbeddingBackend],
        recognizer: Optional[Recognizer],
        layers: Sequence[int] = (),
        long_context: Optional[LongContextConfig] = None,
        views: str = "both",
        entities: bool = True,
        k: int = 3,
        normalize_layers: bool = False,
        batch_size: Optional[int] = None,
    ):
        if views in ("both", "attention") and attention_backend is None:
            raise ValueError(f"views={views!r} needs an attention backend")
        if views in ("both", "embedding") and embedding_backend is None:
            raise ValueError(f"views={views!r} needs an embedding backend")
        if entities and recognizer is None:
            raise ValueError("Entity expansion needs a recognizer")
        self.attention_backend = attention_backend
        self.embedding_backend = embedding_backend
        self.recognizer = recognizer
        self.layers = tuple(layers)
        self.long_context = long_context or LongContextConfig()
        self.views = views
        self.entities = entities
        self.k = k
        self.normalize_layers = normalize_layers
        self.batch_size = batch_size

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Retriever":
        return cls(
            attention_backend=(
                build_attention_backend(cfg.attention) if cfg.uses_attention else None
            ),
            embedding_backend=(
                build_embedding_backend(cfg.embedding) if cfg.uses_embedding else None
            ),
            recognizer=build_recognizer(cfg.recognizer) if cfg.entities else None,
            layers=cfg.attention.layers,
            long_context=cfg.long_context,
            views=cfg.views,
            entities=cfg.entities,
            k=cfg.k,
            normalize_layers=cfg.attention.normalize_layers,
            batch_size=cfg.embedding.batch_size,
        )

    def index(self, sample: RetrievalSample) -> IndexedSample:
        doc = sample.document
        attention = embedding = None
        if self.attention_backend is not None and self.views != "embedding":
            attention = score_long_document(
                sample,
                self.attention_backend,
                self.long_context,
                self.layers,
                self.normalize_layers,
            )
        if self.embedding_backend is not None and self.views != "attention":
            embedding = sentence_embedding_scores(
                doc, sample.query, self.embedding_backend, self.batch_size
            )

        if self.entities:
            index = extract_entities(doc, self.recognizer)
            entity_attention = entity_embedding = None
            if attention is not None:
                entity_attention = entity_scores(index, attention)
            if embedding is not None:
                entity_embedding = entity_scores(index, embedding)
        else:
            index = build_index((), doc)
            entity_attention = entity_embedding = None
        return IndexedSample(
            sample, attention, embedding, index, entity_attention, entity_embedding
        )

    def select(
        self, indexed: IndexedSample, k: Optional[int] = None
    ) -> RetrievalResult:
        k = self.k if k is None else k
        selection = select_topk(
            indexed.attention,
            indexed.embedding,
            indexed.entity_attention,
            indexed.entity_embedding,
            k,
            self.views,
        )
        return expand_to_paragraphs(
            selection, indexed.sample.document, indexed.entities, k
        )

    def retrieve(
        self, sample: RetrievalSample, k: Optional[int] = None
    ) -> RetrievalResult:
        start = time.perf_counter()
        result = self.select(self.index(sample), k)
        logger.debug(
            f"Retrieved {len(result.paragraphs)} paragraphs for {sample.sample_id} "
            f"in {time.perf_counter() - start:.3f}s"
        )
        return result


def retrieve(sample: RetrievalSample, cfg: PipelineConfig) -> RetrievalResult:
    """Run the full pipeline described by ``cfg`` on one sample."""
    return Retriever.from_config(cfg).retrieve(sample)
