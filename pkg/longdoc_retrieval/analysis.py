"""
Layer profiling and needle-in-a-haystack probing.

``profile_layers`` ranks paragraphs by single-layer attention scores and
averages the rank of each subquery's gold paragraph over a dataset; the layers
where some subquery ranks best are the ones worth retrieving with.
``run_needle_probe`` plants a fact at controlled depths of filler text and
counts, per layer, the heads whose strongest attention lands on it.
"""

import csv
import json
import logging
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attnscore import span_max, token_peaks
from .backend import AttentionBackend, AttentionTensor
from .corpus import (
    Encoding,
    InputError,
    RetrievalSample,
    SegmentedDocument,
    TokenSpan,
    covering_tokens,
    segment_document,
)
from .longcontext import LongContextConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

QUARTIC_DEGREE = 4


class MissingSubqueries(InputError):
    """Raised when a sample has no subquery decomposition with gold paragraphs."""

    pass


class InsufficientPoints(InputError):
    """Raised when a polynomial fit has fewer points than coefficients."""

    pass


def rank_paragraphs(scores: Sequence[float]) -> list[int]:
    """1-based rank of every paragraph: highest score first, lower index on ties."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = [0] * len(scores)
    for position, paragraph in enumerate(order, start=1):
        ranks[paragraph] = position
    return ranks


@dataclass(frozen=True, eq=False)
class LayerProfile:
    """
    Mean gold-paragraph rank per (layer, subquery position).

    ``counts[j]`` is the number of samples that have a j-th subquery.
    """

    ranks: np.ndarray
    layer_ids: tuple[int, ...]
    counts: tuple[int, ...]
    sample_count: int

    @property
    def best_layer_per_subquery(self) -> list[int]:
        return [
            self.layer_ids[int(np.argmin(self.ranks[:, j]))]
            for j in range(self.ranks.shape[1])
        ]

    def to_json(self) -> dict:
        return {
            "layer_ids": list(self.layer_ids),
            "ranks": self.ranks.tolist(),
            "counts": list(self.counts),
            "sample_count": self.sample_count,
            "best_layer_per_subquery": self.best_layer_per_subquery,
            "selected_layers": select_layers(self),
        }

    @classmethod
    def from_json(cls, data: dict) -> "LayerProfile":
        return cls(
            ranks=np.asarray(data["ranks"], dtype=np.float64),
            layer_ids=tuple(data["layer_ids"]),
            counts=tuple(data["counts"]),
            sample_count=data["sample_count"],
        )

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["layer", "subquery", "mean_rank"])
            for row, layer in enumerate(self.layer_ids):
                for j in range(self.ranks.shape[1]):
                    writer.writerow([layer, j, f"{self.ranks[row, j]:.6f}"])


def layer_paragraph_scores(A: AttentionTensor, align) -> np.ndarray:
    """Paragraph scores computed from each layer alone, shape [L, paragraphs]."""
    rows = []
    for row in range(len(A.layer_ids)):
        single = AttentionTensor(A.values[row:row + 1], (A.layer_ids[row],))
        rows.append(span_max(token_peaks(single, align), align.paragraph_token_spans))
    return np.asarray(rows)


def profile_layers(
    samples: Sequence[RetrievalSample],
    backend: AttentionBackend,
    layers: Optional[Sequence[int]] = None,
    long_context: Optional[LongContextConfig] = None,
) -> LayerProfile:
    """
    Average each subquery's gold-paragraph rank per layer.

    Each sample takes one forward pass with the full question. When a
    subquery has several gold paragraphs, the best-ranked one counts.

    Raises:
        MissingSubqueries: If any sample lacks subqueries or a subquery lacks gold.
    """
    if not samples:
        raise MissingSubqueries("No samples to profile")
    for sample in samples:
        if not sample.subquery_gold:
            raise MissingSubqueries(
                f"Sample {sample.sample_id} has no subquery decomposition"
            )
        for j, sub in enumerate(sample.subquery_gold):
            if not sub.gold_paragraph_indices:
                raise MissingSubqueries(
                    f"Subquery {j} of sample {sample.sample_id} has no gold paragraph"
                )

    layers = sorted(set(layers if layers is not None else range(backend.num_layers)))
    width = max(len(s.subquery_gold) for s in samples)
    totals = np.zeros((len(layers), width))
    counts = np.zeros(width, dtype=int)

    for n, sample in enumerate(samples, start=1):
        A, align = backend.forward_with_attention(
            sample.document, sample.query, layers, long_context
        )
        scores = layer_paragraph_scores(A, align)
        for row in range(len(layers)):
            ranks = rank_paragraphs(scores[row].tolist())
            for j, sub in enumerate(sample.subquery_gold):
                totals[row, j] += min(ranks[p] for p in sub.gold_paragraph_indices)
        counts[: len(sample.subquery_gold)] += 1
        logger.debug(f"Profiled sample {n}/{len(samples)}: {sample.sample_id}")

    profile = LayerProfile(
        totals / counts, tuple(layers), tuple(int(c) for c in counts), len(samples)
    )
    logger.info(
        f"Profiled {len(samples)} samples over {len(layers)} layers; "
        f"best layers {profile.best_layer_per_subquery}"
    )
    return profile


def select_layers(profile: LayerProfile) -> list[int]:
    """Layers that give the smallest mean rank for at least one subquery."""
    return sorted(set(profile.best_layer_per_subquery))


def _fit_inputs(
    ranks: Sequence[float], layer_ids: Optional[Sequence[int]]
) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(ranks, dtype=np.float64)
    if layer_ids is None:
        x = np.arange(len(y), dtype=np.float64)
    else:
        x = np.asarray(layer_ids, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"{len(x)} layer ids for {len(y)} ranks")
    return x, y


def polynomial_fit(
    ranks: Sequence[float], degree: int, layer_ids: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Least-squares polynomial coefficients, lowest degree first."""
    x, y = _fit_inputs(ranks, layer_ids)
    if len(y) < degree + 1:
        raise InsufficientPoints(
            f"A degree-{degree} fit needs at least {degree + 1} points, got {len(y)}"
        )
    return np.polynomial.polynomial.polyfit(x, y, degree)


def quartic_fit(
    ranks: Sequence[float], layer_ids: Optional[Sequence[int]] = None
) -> np.ndarray:
    return polynomial_fit(ranks, QUARTIC_DEGREE, layer_ids)


def polynomial_residual(
    ranks: Sequence[float], degree: int, layer_ids: Optional[Sequence[int]] = None
) -> float:
    """Residual sum of squares of the least-squares fit of the given degree."""
    x, y = _fit_inputs(ranks, layer_ids)
    coefficients = polynomial_fit(ranks, degree, layer_ids)
    fitted = np.polynomial.polynomial.polyval(x, coefficients)
    return float(np.sum((y - fitted) ** 2))


def needle_head_count(A: AttentionTensor, needle_token_span: TokenSpan) -> np.ndarray:
    """
    Per layer, the number of heads whose largest weight falls on a needle token.

    The argmax runs over (document token, query token) pairs in row-major
    order, so ties go to the earliest token.
    """
    first, last = needle_token_span
    if not 0 <= first <= last < A.doc_token_count:
        raise ValueError(
            f"Needle span {needle_token_span} is outside 0..{A.doc_token_count - 1}"
        )
    layers, heads, _, query_tokens = A.values.shape
    flat = A.values.reshape(layers, heads, -1)
    tokens = flat.argmax(axis=2) // query_tokens
    return ((tokens >= first) & (tokens <= last)).sum(axis=1)


@dataclass(frozen=True)
class NeedleSpec:
    filler: str
    needle: str
    question: str
    depths: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    length_words: int = 1000

    def __post_init__(self):
        if not all(s.strip() for s in (self.filler, self.needle, self.question)):
            raise InputError("Needle spec needs non-empty filler, needle and question")
        if any(not 0.0 <= d <= 1.0 for d in self.depths):
            raise InputError("Needle depths must lie in [0, 1]")
        if self.length_words < 1:
            raise InputError("length_words must be positive")

    @classmethod
    def load(cls, path: str) -> "NeedleSpec":
        """Read a TOML or JSON needle spec."""
        try:
            if path.endswith(".json"):
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            else:
                with open(path, "rb") as f:
                    data = tomllib.load(f)
        except (OSError, ValueError) as e:
            raise InputError(f"Cannot read needle spec {path}: {e}") from e
        try:
            return cls(
                filler=data["filler"],
                needle=data["needle"],
                question=data["question"],
                depths=tuple(float(d) for d in data.get("depths", cls.depths)),
                length_words=int(data.get("length_words", cls.length_words)),
            )
        except KeyError as e:
            raise InputError(f"Needle spec {path} is missing {e}") from e


def build_haystack(
    spec: NeedleSpec, depth: float
) -> tuple[SegmentedDocument, tuple[int, int]]:
    """
    Repeat filler sentences up to ``length_words`` and insert the needle at ``depth``.

    Returns:
        The document and the needle's character span.
    """
    filler = segment_document(spec.filler)
    sentences = filler.sentence_texts()
    haystack = []
    words = 0
    while words < spec.length_words:
        sentence = sentences[len(haystack) % len(sentences)]
        haystack.append(sentence)
        words += len(sentence.split())

    position = round(depth * len(haystack))
    before = " ".join(haystack[:position])
    start = len(before) + 1 if before else 0
    text = " ".join(haystack[:position] + [spec.needle.strip()] + haystack[position:])
    document = segment_document(text, doc_id=f"haystack@{depth:g}")
    return document, (start, start + len(spec.needle.strip()))


@dataclass(frozen=True)
class NeedleResult:
    depth: float
    layer: int
    head_count: int
    heads: int


def needle_token_span(encoding: Encoding, needle_span: tuple[int, int]) -> TokenSpan:
    """Tokens overlapping the needle's characters, whatever sentence they fall in."""
    span = covering_tokens(encoding.offsets, *needle_span)
    if span is None:
        raise InputError(f"The needle at characters {needle_span} covers no tokens")
    return span


def run_needle_probe(
    spec: NeedleSpec,
    backend: AttentionBackend,
    layers: Optional[Sequence[int]] = None,
    long_context: Optional[LongContextConfig] = None,
) -> list[NeedleResult]:
    """Count needle-attending heads per layer at every depth of the spec."""
    layers = sorted(set(layers if layers is not None else range(backend.num_layers)))
    results = []
    for depth in spec.depths:
        document, needle_span = build_haystack(spec, depth)
        A, _ = backend.forward_with_attention(
            document, spec.question, layers, long_context
        )
        span = needle_token_span(backend.encode(document.raw_text), needle_span)
        counts = needle_head_count(A, span)
        for layer, count in zip(A.layer_ids, counts):
            results.append(NeedleResult(depth, layer, int(count), A.head_count))
        logger.debug(f"Needle at depth {depth:g}: {int(counts.sum())} head hits")
    return results


def write_needle_csv(results: Sequence[NeedleResult], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "position_bucket", "head_count"])
        for result in results:
            bucket = f"{result.depth * 100:g}"
            writer.writerow([result.layer, bucket, result.head_count])
