"""
Pipeline configuration: TOML file, environment overrides, validation and fingerprinting.

Example::

    [attention]
    backend = "transformers"
    model_id = "meta-llama/Llama-3.2-3B-Instruct"
    layers = [13, 17, 21]

    [embedding]
    backend = "sentence-transformers"

    [long_context]
    strategy = "chunked"

    [retrieval]
    k = 3

Any key can be overridden from the environment as
``LONGDOC_<TABLE>__<KEY>`` (``LONGDOC_RETRIEVAL__K=5``).
"""

import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .backend import (
    SCRIPTED_FALLBACKS,
    AttentionBackend,
    EmbeddingBackend,
    ScriptedAttentionBackend,
    ScriptedEmbeddingBackend,
    SentenceTransformerBackend,
    TransformersAttentionBackend,
)
from .constants import (
    ABBREVIATIONS,
    ABLATIONS,
    CLOSING_CHARS,
    DEFAULT_EMBEDDING_BATCH_SIZE,
    DEFAULT_EMBEDDING_MODEL,
    DEFAULT_K,
    DEFAULT_KS,
    DEFAULT_PROMPT_TEMPLATE,
    DEFAULT_SPACY_MODEL,
    ENV_PREFIX,
    TERMINAL_PUNCTUATION,
    VIEWS,
)
from .corpus import InputError, SegmentationConfig
from .entity import CapitalizedSpanRecognizer, Recognizer, SpacyRecognizer
from .longcontext import LongContextConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

ATTENTION_BACKENDS = ("scripted", "transformers")
EMBEDDING_BACKENDS = ("scripted", "sentence-transformers")
RECOGNIZERS = ("capitalized", "spacy")


class ConfigError(InputError):
    """Raised when a configuration file or override is invalid."""

    pass


@dataclass(frozen=True)
class AttentionBackendSpec:
    backend: str = "transformers"
    model_id: str = ""
    fixture: Optional[str] = None
    fallback: str = "error"
    fail: bool = False
    layers: tuple[int, ...] = ()
    window_limit: Optional[int] = None
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    device: Optional[str] = None
    dtype: str = "bfloat16"
    normalize_layers: bool = False


@dataclass(frozen=True)
class EmbeddingBackendSpec:
    backend: str = "sentence-transformers"
    model_id: str = DEFAULT_EMBEDDING_MODEL
    fixture: Optional[str] = None
    fail: bool = False
    batch_size: int = DEFAULT_EMBEDDING_BATCH_SIZE
    device: Optional[str] = None


@dataclass(frozen=True)
class RecognizerSpec:
    backend: str = "capitalized"
    model: str = DEFAULT_SPACY_MODEL
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a retrieval, evaluation or analysis run depends on."""

    attention: AttentionBackendSpec = field(default_factory=AttentionBackendSpec)
    embedding: EmbeddingBackendSpec = field(default_factory=EmbeddingBackendSpec)
    recognizer: RecognizerSpec = field(default_factory=RecognizerSpec)
    long_context: LongContextConfig = field(default_factory=LongContextConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    k: int = DEFAULT_K
    views: str = "both"
    entities: bool = True
    ks: tuple[int, ...] = DEFAULT_KS
    workers: int = 1
    seed: int = 0
    dataset: Optional[str] = None
    output_dir: str = "results"
    source: Optional[str] = None

    @property
    def uses_attention(self) -> bool:
        return self.views in ("both", "attention")

    @property
    def uses_embedding(self) -> bool:
        return self.views in ("both", "embedding")

    def with_ablation(self, ablation: Optional[str]) -> "PipelineConfig":
        """Return the config for one ablation arm; ``None`` and ``full`` keep it."""
        if ablation in (None, "full"):
            return self
        if ablation == "attn_only":
            return dataclasses.replace(self, views="attention")
        if ablation == "emb_only":
            return dataclasses.replace(self, views="embedding")
        if ablation == "no_entity":
            return dataclasses.replace(self, entities=False)
        raise ConfigError(
            f"Unknown ablation: {ablation} (expected one of {', '.join(ABLATIONS)})"
        )

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On the first violated rule.
        """
        if self.views not in VIEWS:
            raise ConfigError(
                f"retrieval.views must be one of {', '.join(VIEWS)}, got {self.views!r}"
            )
        if self.k < 1:
            raise ConfigError(f"retrieval.k must be at least 1, got {self.k}")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError(
                "eval.ks must be a non-empty list of positive integers, "
                f"got {list(self.ks)}"
            )
        if self.workers < 1:
            raise ConfigError("eval.workers must be at least 1")
        if self.uses_attention:
            spec = self.attention
            if spec.backend not in ATTENTION_BACKENDS:
                raise ConfigError(
                    f"attention.backend must be one of {', '.join(ATTENTION_BACKENDS)}"
                )
            if not spec.layers:
                raise ConfigError(
                    "attention.layers must not be empty "
                    "when the attention view is enabled"
                )
            if spec.backend == "scripted" and spec.fallback not in SCRIPTED_FALLBACKS:
                raise ConfigError(
                    f"attention.fallback must be one of {', '.join(SCRIPTED_FALLBACKS)}"
                )
            if spec.backend == "transformers" and not spec.model_id:
                raise ConfigError(
                    "attention.model_id is required for the transformers backend"
                )
        if self.uses_embedding:
            if self.embedding.backend not in EMBEDDING_BACKENDS:
                raise ConfigError(
                    f"embedding.backend must be one of {', '.join(EMBEDDING_BACKENDS)}"
                )
            if self.embedding.batch_size < 1:
                raise ConfigError("embedding.batch_size must be at least 1")
        if self.entities and self.recognizer.backend not in RECOGNIZERS:
            raise ConfigError(
                f"recognizer.backend must be one of {', '.join(RECOGNIZERS)}"
            )
        checked = []
        if self.uses_attention:
            checked.append(("attention.fixture", self.attention.fixture))
        if self.uses_embedding:
            checked.append(("embedding.fixture", self.embedding.fixture))
        checked.append(("paths.dataset", self.dataset))
        for label, path in checked:
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"{label} does not exist: {path}")


def _parse_scalar(value: str):
    try:
        return tomllib.loads(f"value = {value}")["value"]
    except tomllib.TOMLDecodeError:
        return value


def apply_env_overrides(
    data: dict, environ: Optional[Mapping[str, str]] = None
) -> dict:
    """
    Overlay ``LONGDOC_<TABLE>__<KEY>`` variables onto raw config data.

    Values are read as TOML scalars (``5``, ``true``, ``[1, 2]``) and fall back
    to plain strings. Variables without a ``__`` separator are ignored.
    """
    environ = os.environ if environ is None else environ
    merged = {
        table: dict(values) if isinstance(values, dict) else values
        for table, values in data.items()
    }
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        table, _, key = name[len(ENV_PREFIX):].lower().partition("__")
        if not table or not key:
            continue
        merged.setdefault(table, {})[key] = _parse_scalar(raw)
        logger.debug(f"Environment override {name} -> {table}.{key}")
    return merged


def _take(table: dict, name: str, known: tuple[str, ...]) -> dict:
    values = table.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{name}]: {', '.join(unknown)}")
    return values


def _resolve(path: Optional[str], base_dir: str) -> Optional[str]:
    if path is None:
        return None
    path = os.path.expanduser(str(path))
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def _field_names(cls) -> tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(cls))


_TABLES = (
    "attention",
    "embedding",
    "recognizer",
    "long_context",
    "segmentation",
    "retrieval",
    "eval",
    "paths",
)
_SEGMENTATION_KEYS = (
    "terminal_punctuation",
    "closing_chars",
    "abbreviations",
    "extra_abbreviations",
)


def config_from_dict(
    data: dict, base_dir: str = ".", source: Optional[str] = None
) -> PipelineConfig:
    """Build and validate a config from parsed TOML data."""
    unknown = sorted(set(data) - set(_TABLES))
    if unknown:
        raise ConfigError(f"Unknown table(s): {', '.join(unknown)}")

    try:
        attention = dict(_take(data, "attention", _field_names(AttentionBackendSpec)))
        attention["layers"] = tuple(attention.get("layers", ()))
        attention["fixture"] = _resolve(attention.get("fixture"), base_dir)

        embedding = dict(_take(data, "embedding", _field_names(EmbeddingBackendSpec)))
        embedding["fixture"] = _resolve(embedding.get("fixture"), base_dir)

        recognizer = dict(_take(data, "recognizer", _field_names(RecognizerSpec)))
        recognizer["labels"] = tuple(recognizer.get("labels", ()))

        long_context = LongContextConfig(
            **_take(data, "long_context", _field_names(LongContextConfig))
        )

        segmentation = dict(_take(data, "segmentation", _SEGMENTATION_KEYS))
        abbreviations = frozenset(
            a.lower() for a in segmentation.get("abbreviations", ABBREVIATIONS)
        )
        abbreviations |= frozenset(
            a.lower() for a in segmentation.get("extra_abbreviations", ())
        )
        rules = SegmentationConfig(
            terminal_punctuation=segmentation.get(
                "terminal_punctuation", TERMINAL_PUNCTUATION
            ),
            closing_chars=segmentation.get("closing_chars", CLOSING_CHARS),
            abbreviations=abbreviations,
        )

        retrieval = _take(data, "retrieval", ("k", "views", "entities", "ablation"))
        evaluation = _take(data, "eval", ("ks", "workers", "seed"))
        paths = _take(data, "paths", ("dataset", "output_dir"))

        cfg = PipelineConfig(
            attention=AttentionBackendSpec(**attention),
            embedding=EmbeddingBackendSpec(**embedding),
            recognizer=RecognizerSpec(**recognizer),
            long_context=long_context,
            segmentation=rules,
            k=retrieval.get("k", DEFAULT_K),
            views=retrieval.get("views", "both"),
            entities=retrieval.get("entities", True),
            ks=tuple(evaluation.get("ks", DEFAULT_KS)),
            workers=evaluation.get("workers", 1),
            seed=evaluation.get("seed", 0),
            dataset=_resolve(paths.get("dataset"), base_dir),
            output_dir=_resolve(paths.get("output_dir", "results"), base_dir),
            source=source,
        )
        cfg = cfg.with_ablation(retrieval.get("ablation"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

    cfg.validate()
    return cfg


def load_config(
    path: str, environ: Optional[Mapping[str, str]] = None
) -> PipelineConfig:
    """
    Read a TOML config file, apply environment overrides and validate.

    Relative paths inside the file resolve against the file's directory.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid.
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    data = apply_env_overrides(data, environ)
    cfg = config_from_dict(data, os.path.dirname(os.path.abspath(path)), source=path)
    logger.info(
        f"Loaded configuration from {path} (fingerprint {config_fingerprint(cfg)})"
    )
    return cfg


def _jsonable(value):
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def config_fingerprint(cfg: PipelineConfig) -> str:
    """Stable short hash of the resolved configuration."""
    data = dataclasses.asdict(cfg)
    data.pop("source", None)
    canonical = json.dumps(data, sort_keys=True, default=_jsonable)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def build_attention_backend(spec: AttentionBackendSpec) -> AttentionBackend:
    if spec.backend == "scripted":
        options = {"fallback": spec.fallback, "fail": spec.fail}
        if spec.window_limit is not None:
            options["window_limit"] = spec.window_limit
        if spec.fixture is None:
            return ScriptedAttentionBackend(**options)
        return ScriptedAttentionBackend.load(spec.fixture, **options)
    return TransformersAttentionBackend(
        spec.model_id,
        window_limit=spec.window_limit,
        prompt_template=spec.prompt_template,
        device=spec.device,
        dtype=spec.dtype,
    )


def build_embedding_backend(spec: EmbeddingBackendSpec) -> EmbeddingBackend:
    if spec.backend == "scripted":
        if spec.fixture is None:
            return ScriptedEmbeddingBackend(fail=spec.fail)
        return ScriptedEmbeddingBackend.load(spec.fixture, fail=spec.fail)
    return SentenceTransformerBackend(
        spec.model_id, batch_size=spec.batch_size, device=spec.device
    )


def build_recognizer(spec: RecognizerSpec) -> Recognizer:
    if spec.backend == "spacy":
        return SpacyRecognizer(spec.model, spec.labels or None)
    return CapitalizedSpanRecognizer()
