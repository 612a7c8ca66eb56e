"""
Attention over documents longer than the model's context window.

Two strategies assemble a document-wide attention tensor from several model
calls. ``chunked`` reads overlapping segments and keeps, for every
(layer, token, query token), the head vector whose head mean is largest.
``cascading`` streams the document through a bounded token cache and scores
only the tokens that survive until the query is processed.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .constants import DEFAULT_CASCADE_STAGES, DEFAULT_OVERLAP_RATIO, STRATEGIES

logger = logging.getLogger(__name__)

# Called with document token positions, returns attention [L, H, len(positions), T_q]
AttendFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class LongContextConfig:
    """How to handle inputs that exceed the context window."""

    strategy: str = "none"
    segment_length: Optional[int] = None
    overlap: Optional[int] = None
    cache_budget: Optional[int] = None
    stages: int = DEFAULT_CASCADE_STAGES

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"Unknown long-context strategy: {self.strategy} "
                f"(expected one of {', '.join(STRATEGIES)})"
            )
        if self.segment_length is not None and self.segment_length < 1:
            raise ValueError("segment_length must be positive")
        if self.overlap is not None and self.overlap < 0:
            raise ValueError("overlap must not be negative")
        if (
            self.overlap is not None
            and self.segment_length is not None
            and self.overlap >= self.segment_length
        ):
            raise ValueError("overlap must be smaller than segment_length")
        if self.cache_budget is not None and self.cache_budget < 1:
            raise ValueError("cache_budget must be positive")
        if self.stages < 1:
            raise ValueError("stages must be at least 1")


def plan_segments(
    token_count: int, segment_length: int, overlap: int
) -> list[tuple[int, int]]:
    """
    Split ``token_count`` tokens into half-open segments of ``segment_length``.

    Consecutive segments share ``overlap`` tokens, so any run of at most
    ``overlap + 1`` tokens lies entirely inside at least one segment.
    """
    if segment_length < 1:
        raise ValueError("segment_length must be positive")
    if not 0 <= overlap < segment_length:
        raise ValueError("overlap must be in [0, segment_length)")
    step = segment_length - overlap
    segments = []
    start = 0
    while True:
        end = min(start + segment_length, token_count)
        segments.append((start, end))
        if end >= token_count:
            return segments
        start += step


def default_overlap(segment_length: int) -> int:
    return min(int(segment_length * DEFAULT_OVERLAP_RATIO), segment_length - 1)


def chunked_attention(
    attend: AttendFn, token_count: int, segments: Sequence[tuple[int, int]]
) -> np.ndarray:
    """Assemble a [L, H, token_count, T_q] tensor from overlapping segment passes."""
    values = None
    best = None
    for start, end in segments:
        block = attend(list(range(start, end)))
        if values is None:
            layers, heads, _, query_tokens = block.shape
            values = np.zeros(
                (layers, heads, token_count, query_tokens), dtype=block.dtype
            )
            best = np.full((layers, token_count, query_tokens), -np.inf)
        mean = block.mean(axis=1)
        current = best[:, start:end, :]
        better = mean > current
        values[:, :, start:end, :] = np.where(
            better[:, None, :, :], block, values[:, :, start:end, :]
        )
        best[:, start:end, :] = np.where(better, mean, current)
        logger.debug(f"Chunked pass over tokens [{start}, {end})")
    return values


def stage_capacities(budget: int, stages: int) -> list[int]:
    """Split ``budget`` into sub-cache sizes, newest stage first.

    Each older stage gets twice the share of the one before it.
    """
    weights = [2**i for i in range(stages)]
    total = sum(weights)
    capacities = [budget * w // total for w in weights]
    capacities[0] += budget - sum(capacities)
    return capacities


def retain_tokens(
    positions: Sequence[int], mass: np.ndarray, budget: int, stages: int
) -> list[int]:
    """
    Apply the staged retention policy and return the surviving positions in order.

    The newest stage keeps its tokens unconditionally. Each older stage looks at
    twice its capacity of the next-oldest tokens and keeps the half with the
    most accumulated attention mass (newer token wins a tie). Tokens left over
    after the oldest stage are evicted.
    """
    if len(positions) <= budget:
        return list(positions)
    capacities = stage_capacities(budget, stages)
    newest_first = sorted(positions, reverse=True)
    kept = newest_first[: capacities[0]]
    rest = newest_first[capacities[0]:]
    for capacity in capacities[1:]:
        if not rest:
            break
        window, rest = rest[: 2 * capacity], rest[2 * capacity:]
        ranked = sorted(window, key=lambda p: (-mass[p], -p))
        kept.extend(ranked[:capacity])
    return sorted(kept)


def cascading_attention(
    attend: AttendFn,
    token_count: int,
    budget: int,
    segment_length: int,
    stages: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Stream the document through a bounded cache and attend over the survivors.

    Returns:
        The [L, H, token_count, T_q] tensor (zero for evicted tokens) and the
        boolean mask of retained tokens.
    """
    if budget >= token_count:
        cache = list(range(token_count))
    else:
        mass = np.zeros(token_count)
        cache = []
        for start in range(0, token_count, segment_length):
            end = min(start + segment_length, token_count)
            positions = cache + list(range(start, end))
            block = attend(positions)
            mass[positions] += block.mean(axis=1).sum(axis=(0, 2))
            cache = retain_tokens(positions, mass, budget, stages)
        logger.debug(f"Cascading cache kept {len(cache)} of {token_count} tokens")

    final = attend(cache)
    layers, heads, _, query_tokens = final.shape
    values = np.zeros((layers, heads, token_count, query_tokens), dtype=final.dtype)
    values[:, :, cache, :] = final
    retained = np.zeros(token_count, dtype=bool)
    retained[cache] = True
    return values, retained
