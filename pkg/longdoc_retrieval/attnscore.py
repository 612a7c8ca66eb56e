"""
Sentence and paragraph relevance scores from cross-attention.

A unit's score is the largest head-averaged attention any query token pays to
any token of the unit, in any of the selected layers.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backend import AttentionBackend, AttentionTensor, ShapeMismatch
from .corpus import RetrievalSample, TokenAlignment, TokenSpan
from .longcontext import LongContextConfig

logger = logging.getLogger(__name__)

SCORE_KINDS = ("attention", "embedding")


@dataclass(frozen=True)
class ScoreSheet:
    """One score per sentence, in sentence order."""

    kind: str
    scores: tuple[float, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"Unknown score kind: {self.kind}")

    def __len__(self) -> int:
        return len(self.scores)

    def to_json(self) -> dict:
        data = {"kind": self.kind}
        data.update(self.provenance)
        data["scores"] = list(self.scores)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "ScoreSheet":
        provenance = {
            key: value for key, value in data.items() if key not in ("kind", "scores")
        }
        return cls(
            kind=data["kind"],
            scores=tuple(float(s) for s in data["scores"]),
            provenance=provenance,
        )


def _head_mean(
    A: AttentionTensor, align: TokenAlignment, normalize_layers: bool = False
) -> np.ndarray:
    expected = (align.doc_token_count, align.query_token_count)
    if (A.doc_token_count, A.query_token_count) != expected:
        raise ShapeMismatch(
            f"Attention covers {A.doc_token_count}x{A.query_token_count} tokens, "
            f"alignment has {align.doc_token_count}x{align.query_token_count}"
        )
    mean = A.values.mean(axis=1)
    if normalize_layers:
        peaks = mean.max(axis=(1, 2), keepdims=True)
        mean = np.divide(mean, peaks, out=np.zeros_like(mean), where=peaks > 0)
    return mean


def token_peaks(
    A: AttentionTensor, align: TokenAlignment, normalize_layers: bool = False
) -> np.ndarray:
    """Largest head-averaged attention per document token over layers and queries."""
    return _head_mean(A, align, normalize_layers).max(axis=(0, 2))


def span_max(peaks: np.ndarray, spans: Sequence[TokenSpan]) -> list[float]:
    return [float(peaks[first:last + 1].max()) for first, last in spans]


def sentence_attention_scores(
    A: AttentionTensor, align: TokenAlignment, normalize_layers: bool = False
) -> ScoreSheet:
    """
    Score every sentence by the max over layers, sentence tokens and query tokens
    of the head-averaged attention.

    Raises:
        ShapeMismatch: If the tensor and alignment disagree on token counts.
    """
    peaks = token_peaks(A, align, normalize_layers)
    scores = span_max(peaks, align.sentence_token_spans)
    return ScoreSheet("attention", tuple(scores), {"layers": list(A.layer_ids)})


def paragraph_attention_scores(
    A: AttentionTensor, align: TokenAlignment, normalize_layers: bool = False
) -> list[float]:
    """Same aggregation as sentence scores, over each paragraph's token span."""
    peaks = token_peaks(A, align, normalize_layers)
    return span_max(peaks, align.paragraph_token_spans)


def _fill_evicted(
    scores: list[float], retained: np.ndarray, spans: Sequence[TokenSpan]
) -> list[float]:
    observed = [
        i for i, (first, last) in enumerate(spans) if retained[first:last + 1].any()
    ]
    if len(observed) == len(spans):
        return scores
    floor = min(scores[i] for i in observed) if observed else 0.0
    evicted = set(range(len(spans))) - set(observed)
    logger.debug(
        f"{len(evicted)} sentences were evicted from the cache "
        f"and get the floor score {floor}"
    )
    return [floor if i in evicted else s for i, s in enumerate(scores)]


def score_long_document(
    sample: RetrievalSample,
    backend: AttentionBackend,
    cfg: Optional[LongContextConfig],
    layers: Sequence[int],
    normalize_layers: bool = False,
) -> ScoreSheet:
    """
    Attention scores for a sample of any length.

    Inputs within the model window take a single pass whatever the strategy.
    Longer inputs are read in overlapping chunks or streamed through the
    cascading cache; sentences the cache never kept receive the minimum score
    observed among the kept ones.

    Raises:
        ContextOverflow: If the input is too long and the strategy is ``none``.
    """
    A, align = backend.forward_with_attention(
        sample.document, sample.query, layers, cfg
    )
    sheet = sentence_attention_scores(A, align, normalize_layers)
    if A.retained is None:
        return sheet
    scores = _fill_evicted(list(sheet.scores), A.retained, align.sentence_token_spans)
    return ScoreSheet("attention", tuple(scores), sheet.provenance)
