"""
Tests for attention-based sentence and paragraph scores.
"""

import numpy as np
import pytest

from longdoc_retrieval.attnscore import (
    ScoreSheet,
    paragraph_attention_scores,
    score_long_document,
    sentence_attention_scores,
)
from longdoc_retrieval.backend import (
    AttentionTensor,
    ContextOverflow,
    ScriptedAttentionBackend,
    ShapeMismatch,
)
from longdoc_retrieval.corpus import RetrievalSample, TokenAlignment, segment_document
from longdoc_retrieval.longcontext import LongContextConfig


def _random_alignment(rng, doc_tokens, query_tokens):
    """Partition the document into random sentences, grouped into random paragraphs."""
    cut_count = min(doc_tokens - 1, int(rng.integers(0, 6)))
    cuts = []
    if cut_count:
        picked = rng.choice(np.arange(1, doc_tokens), size=cut_count, replace=False)
        cuts = sorted(picked)
    bounds = [0] + [int(c) for c in cuts] + [doc_tokens]
    sentences = [(bounds[i], bounds[i + 1] - 1) for i in range(len(bounds) - 1)]
    paragraphs = []
    start = 0
    while start < len(sentences):
        end = min(len(sentences), start + int(rng.integers(1, 3)))
        paragraphs.append((sentences[start][0], sentences[end - 1][1]))
        start = end
    return TokenAlignment(
        "test", doc_tokens, query_tokens, tuple(sentences), tuple(paragraphs)
    )


def _assert_matches_oracle(scores, values, spans):
    assert np.allclose(scores, _oracle(values, spans), rtol=0, atol=1e-9)


def _scores(values, align, layer_ids=(0, 1)):
    return sentence_attention_scores(AttentionTensor(values, layer_ids), align).scores


def _oracle(values, spans):
    layers, heads, _, query_tokens = values.shape
    scores = []
    for first, last in spans:
        best = -1.0
        for layer in range(layers):
            for t in range(first, last + 1):
                for tq in range(query_tokens):
                    mean = sum(values[layer, h, t, tq] for h in range(heads)) / heads
                    best = max(best, mean)
        scores.append(best)
    return scores


class TestSentenceAttentionScores:
    """Tests for per-sentence attention scores."""

    def test_uniform_attention(self):
        """Test that uniform attention gives every sentence 1/T_d."""
        A = AttentionTensor(np.full((1, 2, 8, 3), 1 / 8), (0,))
        align = TokenAlignment("t", 8, 3, ((0, 3), (4, 7)), ((0, 7),))
        sheet = sentence_attention_scores(A, align)
        assert sheet.kind == "attention"
        assert sheet.scores == (0.125, 0.125)
        assert sheet.provenance == {"layers": [0]}

    def test_heads_are_averaged_before_max(self):
        """Test that a (0.9, 0.1) head pair scores 0.5, not 0.9."""
        values = np.full((1, 2, 6, 2), 0.01)
        values[0, :, 4, 1] = [0.9, 0.1]
        A = AttentionTensor(values, (0,))
        align = TokenAlignment("t", 6, 2, ((0, 2), (3, 5)), ((0, 5),))
        sheet = sentence_attention_scores(A, align)
        assert sheet.scores[1] == pytest.approx(0.5)
        assert sheet.scores[0] == pytest.approx(0.01)

    def test_matches_nested_loop_oracle(self):
        """Test sentence and paragraph scores against a nested-loop oracle."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            layers, heads = int(rng.integers(1, 5)), int(rng.integers(1, 9))
            doc_tokens, query_tokens = int(rng.integers(1, 25)), int(rng.integers(1, 5))
            values = rng.random((layers, heads, doc_tokens, query_tokens))
            A = AttentionTensor(values, tuple(range(layers)))
            align = _random_alignment(rng, doc_tokens, query_tokens)
            sentences = sentence_attention_scores(A, align).scores
            paragraphs = paragraph_attention_scores(A, align)
            _assert_matches_oracle(sentences, values, align.sentence_token_spans)
            _assert_matches_oracle(paragraphs, values, align.paragraph_token_spans)

    @pytest.mark.slow
    def test_matches_oracle_at_full_size(self):
        """Test the oracle equivalence on the largest tensor shapes."""
        rng = np.random.default_rng(12)
        for _ in range(100):
            values = rng.random((4, 8, 64, 8))
            A = AttentionTensor(values, (0, 1, 2, 3))
            align = _random_alignment(rng, 64, 8)
            scores = sentence_attention_scores(A, align).scores
            _assert_matches_oracle(scores, values, align.sentence_token_spans)

    def test_raising_an_entry_only_affects_its_sentence(self):
        """Test that a larger entry raises only its own sentence, if anything."""
        rng = np.random.default_rng(5)
        for _ in range(50):
            values = rng.random((2, 3, 12, 2))
            align = _random_alignment(rng, 12, 2)
            before = _scores(values, align)
            bumped = values.copy()
            layer, head, t, tq = (int(rng.integers(n)) for n in bumped.shape)
            bumped[layer, head, t, tq] += float(rng.random())
            after = _scores(bumped, align)
            owner = next(
                i
                for i, (first, last) in enumerate(align.sentence_token_spans)
                if first <= t <= last
            )
            for i, (b, a) in enumerate(zip(before, after)):
                if i == owner:
                    assert a >= b
                else:
                    assert a == b

    def test_head_permutation_invariance(self):
        """Test that reordering heads leaves scores unchanged."""
        rng = np.random.default_rng(6)
        values = rng.random((2, 5, 10, 3))
        align = _random_alignment(rng, 10, 3)
        permuted = values[:, rng.permutation(5)]
        first = _scores(values, align)
        second = _scores(permuted, align)
        assert np.allclose(first, second, rtol=0, atol=1e-12)

    def test_adding_a_layer_never_lowers_scores(self):
        """Test layer-subset monotonicity."""
        rng = np.random.default_rng(8)
        values = rng.random((3, 2, 10, 2))
        align = _random_alignment(rng, 10, 2)
        A = AttentionTensor(values, (0, 1, 2))
        subset = sentence_attention_scores(A.select_layers([0, 2]), align).scores
        full = sentence_attention_scores(A, align).scores
        assert all(f >= s for f, s in zip(full, subset))

    def test_shape_mismatch(self):
        """Test that an alignment for another tokenization is rejected."""
        A = AttentionTensor(np.ones((1, 1, 4, 2)), (0,))
        align = TokenAlignment("t", 5, 2, ((0, 4),), ((0, 4),))
        with pytest.raises(ShapeMismatch):
            sentence_attention_scores(A, align)

    def test_normalize_layers(self):
        """Test that layer normalization rescales each layer by its peak."""
        values = np.zeros((2, 1, 4, 1))
        values[0, 0, :, 0] = [0.2, 0.1, 0.0, 0.0]
        values[1, 0, :, 0] = [0.0, 0.0, 0.05, 0.025]
        A = AttentionTensor(values, (0, 1))
        align = TokenAlignment("t", 4, 1, ((0, 1), (2, 3)), ((0, 3),))
        assert sentence_attention_scores(A, align).scores == (0.2, 0.05)
        normalized = sentence_attention_scores(A, align, normalize_layers=True)
        assert normalized.scores == (1.0, 1.0)


class TestParagraphAttentionScores:
    """Tests for per-paragraph attention scores."""

    def test_full_span_is_global_max(self):
        """Test that a paragraph covering everything scores the global max."""
        values = np.random.default_rng(9).random((2, 3, 7, 2))
        A = AttentionTensor(values, (0, 1))
        align = TokenAlignment("t", 7, 2, ((0, 6),), ((0, 6),))
        expected = values.mean(axis=1).max()
        assert paragraph_attention_scores(A, align) == [pytest.approx(expected)]

    def test_spike_in_second_paragraph(self):
        """Test that a spike planted in the second paragraph gives it the top score."""
        values = np.full((1, 2, 6, 1), 0.01)
        values[0, :, 4, 0] = 0.8
        A = AttentionTensor(values, (0,))
        align = TokenAlignment("t", 6, 1, ((0, 2), (3, 5)), ((0, 2), (3, 5)))
        scores = paragraph_attention_scores(A, align)
        assert scores[1] > scores[0]

    def test_all_zero(self):
        """Test that an all-zero tensor scores every paragraph 0."""
        A = AttentionTensor(np.zeros((1, 1, 4, 1)), (0,))
        align = TokenAlignment("t", 4, 1, ((0, 1), (2, 3)), ((0, 1), (2, 3)))
        assert paragraph_attention_scores(A, align) == [0.0, 0.0]


class TestScoreLongDocument:
    """Tests for scoring with the long-context strategies."""

    TEXT = "a b c. d e f. g h. i j."
    QUERY = "q"

    def _sample(self):
        return RetrievalSample("long", segment_document(self.TEXT), self.QUERY)

    def _tensor(self):
        values = np.random.default_rng(10).random((2, 3, 10, 1))
        return values

    def _backend(self, values, window_limit):
        return ScriptedAttentionBackend.from_tensor(
            self.TEXT, self.QUERY, values, window_limit=window_limit
        )

    @pytest.mark.parametrize(
        "cfg",
        [
            LongContextConfig("none"),
            LongContextConfig("chunked"),
            LongContextConfig("cascading", cache_budget=16),
        ],
    )
    def test_within_window_equals_single_pass(self, cfg):
        """Test that any strategy gives the single-pass scores when the input fits."""
        tensor = self._tensor()
        backend = self._backend(tensor, 64)
        sample = self._sample()
        A, align = backend.forward_with_attention(sample.document, sample.query, [0, 1])
        expected = sentence_attention_scores(A, align)
        assert score_long_document(sample, backend, cfg, [0, 1]) == expected

    def test_chunked_equals_global_pass(self):
        """Test that chunked scoring over slices of one tensor matches one pass."""
        tensor = self._tensor()
        wide = self._backend(tensor, 64)
        narrow = self._backend(tensor, 5)
        sample = self._sample()
        cfg = LongContextConfig("chunked", segment_length=4, overlap=3)
        chunked = score_long_document(sample, narrow, cfg, [0, 1])
        assert chunked.scores == score_long_document(sample, wide, None, [0, 1]).scores

    def test_overflow_under_none(self):
        """Test that the none strategy refuses inputs beyond the window."""
        backend = self._backend(self._tensor(), 5)
        with pytest.raises(ContextOverflow):
            score_long_document(self._sample(), backend, LongContextConfig("none"), [0])

    def test_evicted_sentences_get_minimum_observed_score(self):
        """Test that sentences the cache dropped take the lowest kept score."""
        values = np.zeros((1, 2, 10, 1))
        values[0, :, 0, 0] = 0.9
        values[0, :, 6, 0] = 0.4
        values[0, :, 8, 0] = 0.7
        backend = self._backend(values, 9)
        cfg = LongContextConfig("cascading", cache_budget=4, segment_length=4, stages=1)
        sheet = score_long_document(self._sample(), backend, cfg, [0])
        assert sheet.scores == (0.4, 0.4, 0.4, 0.7)


class TestScoreSheet:
    """Tests for score sheet serialization."""

    def test_json_layout(self):
        """Test the serialized layout of an attention sheet."""
        sheet = ScoreSheet("attention", (0.5, 0.25), {"layers": [3, 4]})
        assert sheet.to_json() == {
            "kind": "attention",
            "layers": [3, 4],
            "scores": [0.5, 0.25],
        }
        assert ScoreSheet.from_json(sheet.to_json()) == sheet

    def test_unknown_kind(self):
        """Test that only attention and embedding sheets exist."""
        with pytest.raises(ValueError):
            ScoreSheet("bm25", (0.1,))
