"""
Sentence relevance by cosine similarity between sentence and query embeddings.
"""

import logging
from typing import Optional

import numpy as np

from .attnscore import ScoreSheet
from .backend import BackendError, EmbeddingBackend
from .corpus import EmptyDocument, SegmentedDocument

logger = logging.getLogger(__name__)


class ZeroNorm(BackendError):
    """Raised when an embedding vector has zero norm."""

    pass


def _unit(values: np.ndarray, label: str) -> np.ndarray:
    norm = np.linalg.norm(values)
    if not np.isfinite(norm) or norm == 0:
        raise ZeroNorm(f"Embedding of {label} has zero norm")
    return values / norm


def sentence_embedding_scores(
    doc: SegmentedDocument,
    query: str,
    backend: EmbeddingBackend,
    batch_size: Optional[int] = None,
) -> ScoreSheet:
    """
    Score every sentence by cosine similarity with the query.

    Sentences are embedded on their own, without surrounding context, in
    batches of ``batch_size`` (all at once when unset).

    Raises:
        ZeroNorm: If any vector has zero norm.
        BackendFailure: If the embedding model fails.
    """
    texts = doc.sentence_texts()
    if not texts:
        raise EmptyDocument(f"Document {doc.doc_id or ''} has no sentences")
    step = batch_size or len(texts)
    vectors = []
    for start in range(0, len(texts), step):
        vectors.extend(backend.embed(texts[start:start + step]))
    query_vector = _unit(backend.embed([query])[0].values, "the query")

    scores = []
    for i, vector in enumerate(vectors):
        cosine = float(np.dot(_unit(vector.values, f"sentence {i}"), query_vector))
        scores.append(min(1.0, max(-1.0, cosine)))
    logger.debug(f"Embedded {len(texts)} sentences with {backend.model_id}")
    return ScoreSheet("embedding", tuple(scores), {"model": backend.model_id})
