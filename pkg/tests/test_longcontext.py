"""
Tests for chunked and cascading attention assembly.
"""

import numpy as np
import pytest

from longdoc_retrieval.longcontext import (
    LongContextConfig,
    cascading_attention,
    chunked_attention,
    default_overlap,
    plan_segments,
    retain_tokens,
    stage_capacities,
)


def _slicer(tensor, calls=None):
    def attend(positions):
        if calls is not None:
            calls.append(list(positions))
        return tensor[:, :, list(positions), :]

    return attend


class TestLongContextConfig:
    """Tests for strategy settings validation."""

    def test_defaults(self):
        """Test the default strategy."""
        cfg = LongContextConfig()
        assert cfg.strategy == "none"
        assert cfg.stages == 4

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"strategy": "sliding"},
            {"segment_length": 0},
            {"overlap": -1},
            {"segment_length": 4, "overlap": 4},
            {"cache_budget": 0},
            {"stages": 0},
        ],
    )
    def test_invalid(self, kwargs):
        """Test that invalid settings are rejected."""
        with pytest.raises(ValueError):
            LongContextConfig(**kwargs)


class TestPlanSegments:
    """Tests for overlapping segment planning."""

    def test_overlapping_segments(self):
        """Test segment boundaries with overlap."""
        assert plan_segments(10, 4, 1) == [(0, 4), (3, 7), (6, 10)]

    def test_short_document(self):
        """Test that a document shorter than a segment is one segment."""
        assert plan_segments(3, 4, 1) == [(0, 3)]

    def test_invalid_overlap(self):
        """Test that overlap must be smaller than the segment."""
        with pytest.raises(ValueError):
            plan_segments(10, 4, 4)

    def test_default_overlap(self):
        """Test the default quarter-segment overlap."""
        assert default_overlap(100) == 25
        assert default_overlap(2) == 0

    def test_short_runs_fit_in_one_segment(self):
        """Test that every run of at most overlap + 1 tokens fits in a segment."""
        rng = np.random.default_rng(3)
        for _ in range(100):
            token_count = int(rng.integers(1, 80))
            segment_length = int(rng.integers(1, 20))
            overlap = int(rng.integers(0, segment_length))
            segments = plan_segments(token_count, segment_length, overlap)
            assert segments[0][0] == 0 and segments[-1][1] == token_count
            for start in range(token_count):
                end = min(start + overlap + 1, token_count)
                assert any(s <= start and end <= e for s, e in segments)


class TestChunkedAttention:
    """Tests for chunked assembly."""

    def test_slices_of_one_tensor_reassemble_exactly(self):
        """Test that segment-local slices of a global tensor rebuild it."""
        tensor = np.random.default_rng(0).random((2, 3, 12, 4))
        values = chunked_attention(_slicer(tensor), 12, plan_segments(12, 5, 2))
        assert np.array_equal(values, tensor)

    def test_overlap_keeps_larger_head_mean(self):
        """Test that the segment with the larger head mean wins an overlapping token."""
        blocks = [np.full((1, 2, 3, 1), 0.1), np.full((1, 2, 3, 1), 0.3)]
        values = chunked_attention(lambda positions: blocks.pop(0), 5, [(0, 3), (2, 5)])
        assert values[0, :, :2, 0].tolist() == [[0.1, 0.1], [0.1, 0.1]]
        assert np.allclose(values[0, :, 2:, 0], 0.3)

    def test_tie_keeps_earliest_segment(self):
        """Test that on equal head means the earlier segment's head vector is kept."""
        first = np.zeros((1, 2, 2, 1))
        first[0, :, 1, 0] = [0.2, 0.0]
        second = np.zeros((1, 2, 2, 1))
        second[0, :, 0, 0] = [0.0, 0.2]
        blocks = [first, second]
        values = chunked_attention(lambda positions: blocks.pop(0), 3, [(0, 2), (1, 3)])
        assert values[0, :, 1, 0].tolist() == [0.2, 0.0]


class TestStagedRetention:
    """Tests for the cascading retention policy."""

    def test_stage_capacities(self):
        """Test geometric stage sizes that sum to the budget."""
        assert stage_capacities(15, 4) == [1, 2, 4, 8]
        assert stage_capacities(10, 4) == [2, 1, 2, 5]
        assert stage_capacities(5, 1) == [5]

    def test_under_budget_keeps_everything(self):
        """Test that nothing is evicted while the cache fits."""
        assert retain_tokens([0, 1, 2], np.zeros(3), 4, 2) == [0, 1, 2]

    def test_older_stage_keeps_high_mass(self):
        """Test that an older stage keeps the tokens with the most attention mass."""
        mass = np.zeros(10)
        mass[[4, 5]] = 1.0
        assert retain_tokens(list(range(10)), mass, 4, 2) == [4, 5, 8, 9]

    def test_ties_prefer_newer_tokens(self):
        """Test that with equal mass the newer tokens survive."""
        assert retain_tokens(list(range(10)), np.zeros(10), 4, 2) == [6, 7, 8, 9]


class TestCascadingAttention:
    """Tests for streaming attention through the bounded cache."""

    def test_budget_covers_document(self):
        """Test that a large enough budget is a single full pass."""
        tensor = np.random.default_rng(1).random((1, 2, 6, 2))
        calls = []
        values, retained = cascading_attention(_slicer(tensor, calls), 6, 6, 3, 4)
        assert np.array_equal(values, tensor)
        assert retained.all()
        assert calls == [[0, 1, 2, 3, 4, 5]]

    def test_single_stage_keeps_newest_tokens(self):
        """Test that one stage behaves as a sliding window over the newest tokens."""
        tensor = np.random.default_rng(2).random((2, 2, 10, 3))
        values, retained = cascading_attention(_slicer(tensor), 10, 4, 3, 1)
        assert retained.tolist() == [False] * 6 + [True] * 4
        assert np.array_equal(values[:, :, 6:, :], tensor[:, :, 6:, :])
        assert not values[:, :, :6, :].any()

    def test_cache_never_exceeds_budget_plus_segment(self):
        """Test that no model call sees more than budget + segment tokens."""
        tensor = np.random.default_rng(4).random((1, 2, 40, 2))
        calls = []
        _, retained = cascading_attention(_slicer(tensor, calls), 40, 8, 5, 3)
        assert max(len(c) for c in calls) <= 13
        assert retained.sum() == 8
        assert all(c == sorted(c) for c in calls)
