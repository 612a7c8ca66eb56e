"""
Model backends: a causal language model exposing per-layer, per-head attention
weights, and a sentence-embedding model.

Each concern has an abstract base class, a scripted implementation that
replays fixture data (used by tests and by the ``fixtures`` command), and a
real implementation built on transformers / sentence-transformers. The real
implementations import their libraries lazily, so the scripted path works
without the ``models`` extra installed.
"""

import hashlib
import json
import logging
import re
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constants import (
    DEFAULT_EMBEDDING_BATCH_SIZE,
    DEFAULT_EMBEDDING_MODEL,
    DEFAULT_PROMPT_TEMPLATE,
    SCRIPTED_EMBEDDING_DIM,
)
from .corpus import Encoding, SegmentedDocument, TokenAlignment, align_encoding
from .longcontext import (
    LongContextConfig,
    cascading_attention,
    chunked_attention,
    default_overlap,
    plan_segments,
)

logger = logging.getLogger(__name__)

SCRIPTED_FALLBACKS = ("error", "uniform", "random")


class BackendError(Exception):
    """Base class for errors raised by or about model backends."""

    pass


class BackendFailure(BackendError):
    """Raised when the underlying model fails or cannot be loaded."""

    pass


class ContextOverflow(BackendError):
    """Raised when an input exceeds the model window and cannot be split."""

    pass


class ShapeMismatch(BackendError):
    """Raised when an attention tensor disagrees with the token alignment."""

    pass


@dataclass(frozen=True, eq=False)
class AttentionTensor:
    """
    Cross-attention weights with shape [L_selected, H, T_d, T_q].

    ``layer_ids`` are the original model layer indices of the first axis.
    ``retained`` marks the document tokens that were actually scored when a
    cascading cache evicted some of them; ``None`` means all tokens were.
    """

    values: np.ndarray
    layer_ids: tuple[int, ...]
    retained: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeMismatch(
                f"Attention tensor must be 4-D, got shape {self.values.shape}"
            )
        if len(self.layer_ids) != self.values.shape[0]:
            raise ShapeMismatch(
                f"{len(self.layer_ids)} layer ids for {self.values.shape[0]} layers"
            )
        if self.retained is not None and self.retained.shape != (self.values.shape[2],):
            raise ShapeMismatch("Retained mask must have one entry per document token")
        if np.any(self.values < 0):
            raise BackendFailure("Attention weights must be non-negative")

    @property
    def head_count(self) -> int:
        return self.values.shape[1]

    @property
    def doc_token_count(self) -> int:
        return self.values.shape[2]

    @property
    def query_token_count(self) -> int:
        return self.values.shape[3]

    def select_layers(self, layer_ids: Sequence[int]) -> "AttentionTensor":
        index = [self.layer_ids.index(layer) for layer in layer_ids]
        return AttentionTensor(self.values[index], tuple(layer_ids), self.retained)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    model_id: str


class WhitespaceTokenizer:
    """Tokens are runs of non-space characters; zero-width characters count as space."""

    tokenizer_id = "whitespace"
    _TOKEN = re.compile(r"[^\s\u200b\u200c\u200d\u2060\ufeff]+")

    def encode(self, text: str) -> Encoding:
        ids = []
        offsets = []
        for match in self._TOKEN.finditer(text):
            ids.append(zlib.crc32(match.group().encode("utf-8")) & 0x7FFFFFFF)
            offsets.append((match.start(), match.end()))
        return Encoding(ids=tuple(ids), offsets=tuple(offsets), text=text)


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class AttentionBackend(ABC):
    """
    A causal language model that reports cross-attention between document and query.

    Subclasses provide tokenization and ``attend``; this class turns them into
    ``forward_with_attention`` including the long-context strategies.
    """

    model_id: str = ""
    window_limit: int = 0

    @property
    @abstractmethod
    def tokenizer_id(self) -> str: ...

    @property
    @abstractmethod
    def num_layers(self) -> int: ...

    @property
    @abstractmethod
    def head_count(self) -> int: ...

    @abstractmethod
    def encode(self, text: str) -> Encoding: ...

    def query_token_count(self, query: str) -> int:
        return len(self.encode(query))

    def template_token_count(self) -> int:
        """Tokens the prompt template adds around document and query."""
        return 0

    @abstractmethod
    def attend(
        self,
        encoding: Encoding,
        positions: Sequence[int],
        query: str,
        layers: Sequence[int],
    ) -> np.ndarray:
        """
        Run the model on the given document tokens followed by the query.

        Returns:
            Attention weights [len(layers), H, len(positions), T_q] from query
            tokens (last axis) to the selected document tokens.
        """

    def _attend_checked(
        self,
        encoding: Encoding,
        positions: Sequence[int],
        query: str,
        layers: Sequence[int],
    ) -> np.ndarray:
        values = self.attend(encoding, positions, query, layers)
        expected = (
            len(layers),
            self.head_count,
            len(positions),
            self.query_token_count(query),
        )
        if values.shape != expected:
            raise ShapeMismatch(
                f"Backend returned attention of shape {values.shape}, "
                f"expected {expected}"
            )
        return values

    def _check_layers(self, layers: Sequence[int]) -> tuple[int, ...]:
        layers = tuple(layers)
        if not layers:
            raise ValueError("At least one layer is required")
        for layer in layers:
            if not 0 <= layer < self.num_layers:
                raise ValueError(f"Layer {layer} is outside 0..{self.num_layers - 1}")
        return layers

    def forward_with_attention(
        self,
        document: SegmentedDocument,
        query: str,
        layers: Sequence[int],
        long_context: Optional[LongContextConfig] = None,
    ) -> tuple[AttentionTensor, TokenAlignment]:
        """
        Compute the document-by-query cross-attention block for the given layers.

        Raises:
            ContextOverflow: If the input exceeds the window under strategy ``none``.
            BackendFailure: If the model fails.
        """
        layers = self._check_layers(layers)
        long_context = long_context or LongContextConfig()
        encoding = self.encode(document.raw_text)
        query_tokens = self.query_token_count(query)
        alignment = align_encoding(document, encoding, query_tokens, self.tokenizer_id)
        token_count = len(encoding)
        capacity = self.window_limit - query_tokens - self.template_token_count()

        def attend(positions):
            return self._attend_checked(encoding, positions, query, layers)

        if token_count <= capacity:
            return AttentionTensor(attend(list(range(token_count))), layers), alignment

        if long_context.strategy == "none":
            total = token_count + query_tokens + self.template_token_count()
            raise ContextOverflow(
                f"Input of {total} tokens exceeds "
                f"the {self.window_limit}-token window of {self.model_id}"
            )

        if long_context.strategy == "chunked":
            segment_length = long_context.segment_length or capacity
            overlap = long_context.overlap
            if overlap is None:
                overlap = default_overlap(segment_length)
            if segment_length > capacity:
                raise ContextOverflow(
                    f"Segment length {segment_length} exceeds "
                    f"the {capacity} tokens left by the window"
                )
            segments = plan_segments(token_count, segment_length, overlap)
            logger.info(
                f"Document of {token_count} tokens read "
                f"in {len(segments)} overlapping segments"
            )
            values = chunked_attention(attend, token_count, segments)
            return AttentionTensor(values, layers), alignment

        budget = long_context.cache_budget or capacity // 2
        segment_length = long_context.segment_length or capacity - budget
        if segment_length < 1 or budget + segment_length > capacity:
            raise ContextOverflow(
                f"Cache budget {budget} plus segment length {segment_length} "
                f"does not fit the {capacity} tokens left by the window"
            )
        logger.info(
            f"Document of {token_count} tokens streamed "
            f"through a {budget}-token cascading cache"
        )
        values, retained = cascading_attention(
            attend, token_count, budget, segment_length, long_context.stages
        )
        return AttentionTensor(values, layers, retained), alignment


@dataclass(frozen=True, eq=False)
class ScriptedEntry:
    document_sha256: str
    query: str
    layer_ids: tuple[int, ...]
    tensor: np.ndarray


class ScriptedAttentionBackend(AttentionBackend):
    """
    Replays attention tensors registered per (document, query) pair.

    Requests for a subset of document tokens or layers are answered with the
    matching slice of the registered tensor, so chunked and cascading passes see
    exactly the values a single pass would.
    """

    def __init__(
        self,
        entries: Sequence[ScriptedEntry] = (),
        *,
        heads: Optional[int] = None,
        num_layers: Optional[int] = None,
        window_limit: int = 1_000_000,
        fallback: str = "error",
        fail: bool = False,
        model_id: str = "scripted",
    ):
        if fallback not in SCRIPTED_FALLBACKS:
            raise ValueError(f"Unknown scripted fallback: {fallback}")
        self.model_id = model_id
        self.window_limit = window_limit
        self.fallback = fallback
        self.fail = fail
        self._tokenizer = WhitespaceTokenizer()
        self._entries: dict[tuple[str, str], ScriptedEntry] = {}
        self._heads = heads
        self._num_layers = num_layers
        for entry in entries:
            self._register(entry)

    @classmethod
    def from_tensor(
        cls,
        document_text: str,
        query: str,
        values: np.ndarray,
        layer_ids: Optional[Sequence[int]] = None,
        **kwargs,
    ) -> "ScriptedAttentionBackend":
        backend = cls(**kwargs)
        backend.add(document_text, query, values, layer_ids)
        return backend

    @classmethod
    def load(cls, path: str, **overrides) -> "ScriptedAttentionBackend":
        """Load a JSON fixture file of nested-array tensors."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise BackendFailure(
                f"Cannot read scripted attention fixture {path}: {e}"
            ) from e
        entries = [
            ScriptedEntry(
                document_sha256=item["document_sha256"],
                query=item["query"],
                layer_ids=tuple(item["layer_ids"]),
                tensor=np.asarray(item["tensor"], dtype=np.float64),
            )
            for item in data.get("entries", [])
        ]
        options = {
            "heads": data.get("heads"),
            "num_layers": data.get("num_layers"),
            "window_limit": data.get("window_limit", 1_000_000),
            "fallback": data.get("fallback", "error"),
            "model_id": data.get("model_id", "scripted"),
        }
        options.update(overrides)
        logger.debug(f"Loaded {len(entries)} scripted attention entries from {path}")
        return cls(entries, **options)

    def save(self, path: str) -> None:
        data = {
            "model_id": self.model_id,
            "window_limit": self.window_limit,
            "heads": self._heads,
            "num_layers": self._num_layers,
            "fallback": self.fallback,
            "entries": [
                {
                    "document_sha256": entry.document_sha256,
                    "query": entry.query,
                    "layer_ids": list(entry.layer_ids),
                    "tensor": entry.tensor.tolist(),
                }
                for entry in self._entries.values()
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)

    def add(
        self,
        document_text: str,
        query: str,
        values: np.ndarray,
        layer_ids: Optional[Sequence[int]] = None,
    ) -> None:
        values = np.asarray(values)
        if layer_ids is None:
            layer_ids = range(values.shape[0])
        entry = ScriptedEntry(_sha256(document_text), query, tuple(layer_ids), values)
        self._register(entry)

    def _register(self, entry: ScriptedEntry) -> None:
        if entry.tensor.ndim != 4 or entry.tensor.shape[0] != len(entry.layer_ids):
            raise ShapeMismatch(
                f"Scripted tensor of shape {entry.tensor.shape} "
                f"does not match layers {entry.layer_ids}"
            )
        if self._heads is None:
            self._heads = entry.tensor.shape[1]
        elif entry.tensor.shape[1] != self._heads:
            raise ShapeMismatch(
                f"Scripted tensor has {entry.tensor.shape[1]} heads, "
                f"expected {self._heads}"
            )
        top_layer = max(entry.layer_ids) + 1
        if self._num_layers is None or self._num_layers < top_layer:
            self._num_layers = top_layer
        self._entries[(entry.document_sha256, entry.query)] = entry

    @property
    def tokenizer_id(self) -> str:
        return self._tokenizer.tokenizer_id

    @property
    def num_layers(self) -> int:
        return self._num_layers or 1

    @property
    def head_count(self) -> int:
        return self._heads or 1

    def encode(self, text: str) -> Encoding:
        return self._tokenizer.encode(text)

    def _fallback_tensor(
        self,
        key: tuple[str, str],
        token_count: int,
        query_tokens: int,
        layers: Sequence[int],
    ) -> np.ndarray:
        shape = (len(layers), self.head_count, token_count, query_tokens)
        if self.fallback == "uniform":
            return np.full(shape, 1.0 / max(token_count, 1))
        seed = int(_sha256(key[0] + "\x00" + key[1])[:16], 16)
        full_shape = (self.num_layers, self.head_count, token_count, query_tokens)
        full = np.random.default_rng(seed).random(full_shape)
        full /= full.sum(axis=2, keepdims=True)
        return full[list(layers)]

    def attend(
        self,
        encoding: Encoding,
        positions: Sequence[int],
        query: str,
        layers: Sequence[int],
    ) -> np.ndarray:
        if self.fail:
            raise BackendFailure(
                f"Scripted backend {self.model_id} is configured to fail"
            )
        key = (_sha256(encoding.text), query)
        entry = self._entries.get(key)
        query_tokens = self.query_token_count(query)
        if entry is None:
            if self.fallback == "error":
                raise BackendFailure(
                    f"No scripted attention for document {key[0][:12]} "
                    f"and query {query!r}"
                )
            full = self._fallback_tensor(key, len(encoding), query_tokens, layers)
            return full[:, :, list(positions), :]

        if entry.tensor.shape[2:] != (len(encoding), query_tokens):
            doc_tokens, scripted_query_tokens = entry.tensor.shape[2:]
            raise ShapeMismatch(
                f"Scripted tensor covers {doc_tokens}x{scripted_query_tokens} tokens, "
                f"input has {len(encoding)}x{query_tokens}"
            )
        try:
            layer_index = [entry.layer_ids.index(layer) for layer in layers]
        except ValueError as e:
            raise BackendFailure(
                f"Scripted tensor has no layer in {list(layers)}: {e}"
            ) from e
        selected = entry.tensor[layer_index]
        if list(positions) == list(range(len(encoding))):
            return selected
        return selected[:, :, list(positions), :]


class TransformersAttentionBackend(AttentionBackend):
    """
    Hugging Face causal language model run with eager attention so weights materialize.

    The prompt template must contain ``{document}`` before ``{query}``; the
    pieces around them are tokenized separately, which fixes the position of
    every document and query token inside the model input.
    """

    def __init__(
        self,
        model_id: str,
        window_limit: Optional[int] = None,
        prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
        device: Optional[str] = None,
        dtype: str = "bfloat16",
    ):
        try:
            import torch
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as e:
            raise BackendFailure(
                "The transformers backend needs the 'models' extra: "
                "pip install longdoc-retrieval[models]"
            ) from e

        if "{document}" not in prompt_template or "{query}" not in prompt_template:
            raise ValueError("Prompt template must contain {document} and {query}")
        prefix, rest = prompt_template.split("{document}", 1)
        middle, suffix = rest.split("{query}", 1)

        self._torch = torch
        self.model_id = model_id
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModelForCausalLM.from_pretrained(
                model_id,
                attn_implementation="eager",
                torch_dtype=getattr(torch, dtype),
            )
        except (OSError, ValueError) as e:
            raise BackendFailure(f"Failed to load {model_id}: {e}") from e
        self._model.to(self.device)
        self._model.eval()

        config = self._model.config
        self.window_limit = window_limit or getattr(
            config, "max_position_embeddings", 4096
        )
        self._num_layers = config.num_hidden_layers
        self._heads = config.num_attention_heads

        bos_id = self._tokenizer.bos_token_id
        bos = [bos_id] if bos_id is not None else []
        self._prefix_ids = bos + self._token_ids(prefix)
        self._middle_ids = self._token_ids(middle)
        self._suffix_ids = self._token_ids(suffix)
        logger.info(
            f"Loaded {model_id} on {self.device}: {self._num_layers} layers, "
            f"{self._heads} heads, window {self.window_limit}"
        )

    def _token_ids(self, text: str) -> list[int]:
        return list(self._tokenizer(text, add_special_tokens=False)["input_ids"])

    @property
    def tokenizer_id(self) -> str:
        return self.model_id

    @property
    def num_layers(self) -> int:
        return self._num_layers

    @property
    def head_count(self) -> int:
        return self._heads

    def encode(self, text: str) -> Encoding:
        encoded = self._tokenizer(
            text, add_special_tokens=False, return_offsets_mapping=True
        )
        return Encoding(
            ids=tuple(encoded["input_ids"]),
            offsets=tuple(
                (int(start), int(end)) for start, end in encoded["offset_mapping"]
            ),
            text=text,
        )

    def query_token_count(self, query: str) -> int:
        return len(self._token_ids(query))

    def template_token_count(self) -> int:
        return len(self._prefix_ids) + len(self._middle_ids) + len(self._suffix_ids)

    def attend(
        self,
        encoding: Encoding,
        positions: Sequence[int],
        query: str,
        layers: Sequence[int],
    ) -> np.ndarray:
        torch = self._torch
        doc_ids = [encoding.ids[p] for p in positions]
        query_ids = self._token_ids(query)
        input_ids = (
            self._prefix_ids
            + doc_ids
            + self._middle_ids
            + query_ids
            + self._suffix_ids
        )
        doc_start = len(self._prefix_ids)
        query_start = doc_start + len(doc_ids) + len(self._middle_ids)

        try:
            with torch.no_grad():
                output = self._model(
                    input_ids=torch.tensor([input_ids], device=self.device),
                    output_attentions=True,
                )
        except RuntimeError as e:
            raise BackendFailure(f"{self.model_id} forward pass failed: {e}") from e
        if output.attentions is None:
            raise BackendFailure(f"{self.model_id} does not expose attention weights")

        blocks = []
        for layer in layers:
            # [H, S, S] with rows as attending (query) positions
            weights = output.attentions[layer][0]
            cross = weights[
                :,
                query_start:query_start + len(query_ids),
                doc_start:doc_start + len(doc_ids),
            ]
            blocks.append(cross.transpose(1, 2).float().cpu().numpy())
        return np.stack(blocks).astype(np.float64)


class EmbeddingBackend(ABC):
    """A sentence-embedding model."""

    model_id: str = ""

    @abstractmethod
    def _encode(self, texts: list[str]) -> np.ndarray: ...

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """
        Embed texts, preserving batch order.

        Raises:
            ValueError: If ``texts`` is empty.
            BackendFailure: If the model fails.
        """
        texts = list(texts)
        if not texts:
            raise ValueError("embed() needs at least one text")
        try:
            matrix = np.asarray(self._encode(texts), dtype=np.float64)
        except BackendError:
            raise
        except (RuntimeError, ValueError, OSError) as e:
            raise BackendFailure(f"Embedding model {self.model_id} failed: {e}") from e
        if matrix.shape[0] != len(texts):
            raise BackendFailure(
                f"Embedding model returned {matrix.shape[0]} vectors "
                f"for {len(texts)} texts"
            )
        return [EmbeddingVector(values=row, model_id=self.model_id) for row in matrix]


def hashed_vector(text: str, dimension: int = SCRIPTED_EMBEDDING_DIM) -> np.ndarray:
    """Deterministic pseudo-random unit vector for a text."""
    seed = int(_sha256(text)[:16], 16)
    vector = np.random.default_rng(seed).standard_normal(dimension)
    return vector / np.linalg.norm(vector)


class ScriptedEmbeddingBackend(EmbeddingBackend):
    """Returns assigned vectors verbatim, and hash-seeded vectors for anything else."""

    def __init__(
        self,
        vectors: Optional[dict] = None,
        *,
        dimension: Optional[int] = None,
        fail: bool = False,
        model_id: str = "scripted-embedding",
    ):
        self.model_id = model_id
        self.fail = fail
        self.vectors = {
            text: np.asarray(v, dtype=np.float64) for text, v in (vectors or {}).items()
        }
        if dimension is None and self.vectors:
            dimension = len(next(iter(self.vectors.values())))
        elif dimension is None:
            dimension = SCRIPTED_EMBEDDING_DIM
        self.dimension = dimension

    @classmethod
    def load(cls, path: str, **overrides) -> "ScriptedEmbeddingBackend":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise BackendFailure(
                f"Cannot read scripted embedding fixture {path}: {e}"
            ) from e
        options = {
            "dimension": data.get("dimension"),
            "model_id": data.get("model_id", "scripted-embedding"),
        }
        options.update(overrides)
        return cls(data.get("vectors", {}), **options)

    def save(self, path: str) -> None:
        data = {
            "model_id": self.model_id,
            "dimension": self.dimension,
            "vectors": {text: v.tolist() for text, v in self.vectors.items()},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)

    def _encode(self, texts: list[str]) -> np.ndarray:
        if self.fail:
            raise BackendFailure(
                f"Scripted backend {self.model_id} is configured to fail"
            )
        rows = []
        for text in texts:
            vector = self.vectors.get(text)
            if vector is None:
                vector = hashed_vector(text, self.dimension)
            elif len(vector) != self.dimension:
                raise BackendFailure(
                    f"Scripted vector for {text!r} has dimension {len(vector)}, "
                    f"expected {self.dimension}"
                )
            rows.append(vector)
        return np.stack(rows)


class SentenceTransformerBackend(EmbeddingBackend):
    """Embeddings from a sentence-transformers model."""

    def __init__(
        self,
        model_id: str = DEFAULT_EMBEDDING_MODEL,
        batch_size: int = DEFAULT_EMBEDDING_BATCH_SIZE,
        device: Optional[str] = None,
    ):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise BackendFailure(
                "The sentence-transformers backend needs the 'models' extra: "
                "pip install longdoc-retrieval[models]"
            ) from e
        self.model_id = model_id
        self.batch_size = batch_size
        try:
            self._model = SentenceTransformer(model_id, device=device)
        except (OSError, ValueError) as e:
            raise BackendFailure(f"Failed to load {model_id}: {e}") from e

    def _encode(self, texts: list[str]) -> np.ndarray:
        return self._model.encode(
            texts,
            batch_size=self.batch_size,
            convert_to_numpy=True,
            normalize_embeddings=False,
            show_progress_bar=False,
        )
