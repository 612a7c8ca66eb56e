"""
Synthetic datasets and scripted-backend fixtures with planted signal.

Documents are lowercase so the capitalized-span recognizer finds no entities.
Attention spikes cover every token of the gold paragraphs, and the query's
embedding equals the embedding of every gold sentence, so a correct pipeline
retrieves exactly the gold paragraphs.
"""

import logging
import os
from typing import Optional, Sequence

import numpy as np

from .analysis import NeedleSpec, build_haystack
from .backend import (
    ScriptedAttentionBackend,
    ScriptedEmbeddingBackend,
    WhitespaceTokenizer,
    hashed_vector,
)
from .corpus import (
    QueryType,
    RetrievalSample,
    Subquery,
    align_tokens,
    covering_tokens,
    document_from_paragraphs,
    save_dataset,
)

logger = logging.getLogger(__name__)

NOISE_RANGE = (0.001, 0.01)
SPIKE = 0.5

_VOCABULARY = (
    "river stone market harbor lantern orchard bridge valley winter "
    "copper garden tower meadow signal ledger canal forest beacon "
    "engine quarry temple island mirror thunder archive compass saddle "
    "harvest glacier pillar furnace timber marble falcon anchor velvet"
).split()

_FILLER = (
    "the grass is green and the sky is blue. "
    "the sun rises over the quiet hills every morning. "
    "a small boat drifts slowly along the calm river."
)
_NEEDLE = "the secret ingredient of the famous soup is smoked paprika."
_NEEDLE_QUESTION = "what is the secret ingredient of the famous soup?"


def _sentence(rng: np.random.Generator, marker: str) -> str:
    words = rng.choice(_VOCABULARY, size=6, replace=False)
    return (
        f"the {words[0]} near the {words[1]} holds {marker} {words[2]} "
        f"and {words[3]} {words[4]} {words[5]}."
    )


def synthetic_dataset(
    n_samples: int = 10,
    paragraphs: int = 5,
    sentences_per_paragraph: int = 3,
    subqueries: int = 0,
    seed: int = 0,
) -> list[RetrievalSample]:
    """
    Build samples with one gold paragraph, or one gold paragraph per subquery.

    Every sentence carries a unique marker word, so no two sentences share text.
    """
    if subqueries > paragraphs:
        raise ValueError("Cannot give each subquery its own gold paragraph")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        texts = [
            " ".join(
                _sentence(rng, f"m{i}x{p}x{s}") for s in range(sentences_per_paragraph)
            )
            for p in range(paragraphs)
        ]
        document = document_from_paragraphs(f"synthetic-{i}", texts)
        if subqueries:
            picked = rng.choice(paragraphs, size=subqueries, replace=False)
            gold = [int(p) for p in picked]
            subquery_gold = tuple(
                Subquery(f"where is hop {j} of item {i}?", frozenset({p}))
                for j, p in enumerate(gold)
            )
            query_type = QueryType.COMPOSITION
        else:
            gold = [int(rng.integers(paragraphs))]
            subquery_gold = None
            query_type = QueryType.SINGLE_HOP
        samples.append(
            RetrievalSample(
                sample_id=f"synthetic-{i}",
                document=document,
                query=f"which paragraph describes item {i}?",
                gold_paragraph_indices=frozenset(gold),
                query_type=query_type,
                subquery_gold=subquery_gold,
            )
        )
    return samples


def plant_attention_fixture(
    sample: RetrievalSample,
    num_layers: int,
    heads: int,
    rng: np.random.Generator,
    spike_layers: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Noise tensor [num_layers, heads, T_d, T_q] with spikes on gold paragraph tokens.

    Without ``spike_layers`` every layer spikes on every gold paragraph. With
    them, subquery j's gold paragraph spikes only at ``spike_layers[j]`` and is
    silenced at every other layer.
    """
    tokenizer = WhitespaceTokenizer()
    align = align_tokens(sample.document, sample.query, tokenizer)
    shape = (num_layers, heads, align.doc_token_count, align.query_token_count)
    values = rng.uniform(*NOISE_RANGE, size=shape)
    if spike_layers is None:
        for p in sample.gold_paragraph_indices:
            first, last = align.paragraph_token_spans[p]
            values[:, :, first:last + 1, :] = SPIKE
        return values

    for j, sub in enumerate(sample.subquery_gold or ()):
        layer = spike_layers[j % len(spike_layers)]
        for p in sub.gold_paragraph_indices:
            first, last = align.paragraph_token_spans[p]
            values[:, :, first:last + 1, :] = 0.0
            values[layer, :, first:last + 1, :] = SPIKE
    return values


def plant_needle_fixture(
    document_text: str,
    question: str,
    needle_span: tuple[int, int],
    num_layers: int,
    heads: int,
    needle_heads: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Noise tensor where the first ``needle_heads`` heads of every layer peak on
    the needle's first token and the other heads peak on a filler token.
    """
    tokenizer = WhitespaceTokenizer()
    encoding = tokenizer.encode(document_text)
    query_tokens = len(tokenizer.encode(question))
    shape = (num_layers, heads, len(encoding), query_tokens)
    values = rng.uniform(*NOISE_RANGE, size=shape)
    first, _ = covering_tokens(encoding.offsets, *needle_span)
    decoy = 0 if first > 0 else len(encoding) - 1
    values[:, :needle_heads, first, :] = SPIKE
    values[:, needle_heads:, decoy, :] = SPIKE
    return values


def _toml_list(values) -> str:
    return "[" + ", ".join(str(v) for v in values) + "]"


def write_fixtures(
    out_dir: str,
    n_samples: int = 10,
    seed: int = 0,
    subqueries: int = 0,
    spike_layers: Sequence[int] = (2, 5),
    num_layers: int = 8,
    heads: int = 4,
    needle_heads: int = 3,
) -> dict:
    """
    Write a synthetic dataset, scripted backend fixtures, a needle spec and a config.

    Returns:
        Paths keyed by ``dataset``, ``attention``, ``embedding``, ``needle``
        and ``config``.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    samples = synthetic_dataset(n_samples, subqueries=subqueries, seed=seed)
    layers_with_spikes = list(spike_layers[:subqueries]) if subqueries else None

    attention = ScriptedAttentionBackend(
        heads=heads, num_layers=num_layers, fallback="uniform"
    )
    embedding = ScriptedEmbeddingBackend()
    for sample in samples:
        tensor = plant_attention_fixture(
            sample, num_layers, heads, rng, layers_with_spikes
        )
        attention.add(sample.document.raw_text, sample.query, np.round(tensor, 6))
        query_vector = hashed_vector(sample.query, embedding.dimension)
        embedding.vectors[sample.query] = query_vector
        for p in sample.gold_paragraph_indices:
            for s in sample.document.sentences_in_paragraph(p):
                embedding.vectors[sample.document.sentence_text(s)] = query_vector

    needle = NeedleSpec(
        filler=_FILLER,
        needle=_NEEDLE,
        question=_NEEDLE_QUESTION,
        depths=(0.0, 0.5, 1.0),
        length_words=120,
    )
    for depth in needle.depths:
        document, span = build_haystack(needle, depth)
        tensor = plant_needle_fixture(
            document.raw_text,
            needle.question,
            span,
            num_layers,
            heads,
            needle_heads,
            rng,
        )
        attention.add(document.raw_text, needle.question, np.round(tensor, 6))

    paths = {name: os.path.join(out_dir, filename) for name, filename in (
        ("dataset", "dataset.jsonl"),
        ("attention", "attention.json"),
        ("embedding", "embedding.json"),
        ("needle", "needle.toml"),
        ("config", "config.toml"),
    )}
    save_dataset(samples, paths["dataset"])
    attention.save(paths["attention"])
    embedding.save(paths["embedding"])

    with open(paths["needle"], "w", encoding="utf-8") as f:
        f.write(f'filler = "{needle.filler}"\n')
        f.write(f'needle = "{needle.needle}"\n')
        f.write(f'question = "{needle.question}"\n')
        f.write(f"depths = {_toml_list(needle.depths)}\n")
        f.write(f"length_words = {needle.length_words}\n")

    layers = layers_with_spikes or list(range(num_layers))
    with open(paths["config"], "w", encoding="utf-8") as f:
        f.write(
            "[attention]\n"
            'backend = "scripted"\n'
            'fixture = "attention.json"\n'
            f"layers = {_toml_list(layers)}\n"
            "\n[embedding]\n"
            'backend = "scripted"\n'
            'fixture = "embedding.json"\n'
            "\n[recognizer]\n"
            'backend = "capitalized"\n'
            "\n[retrieval]\n"
            "k = 3\n"
            "\n[eval]\n"
            "ks = [1, 2, 3, 5]\n"
            f"seed = {seed}\n"
            "\n[paths]\n"
            'dataset = "dataset.jsonl"\n'
            'output_dir = "results"\n'
        )
    logger.info(f"Wrote {n_samples} synthetic samples and fixtures to {out_dir}")
    return paths
