"""
Tests for configuration loading, overrides and validation.
"""

import os
import tempfile

import pytest

from longdoc_retrieval.backend import ScriptedAttentionBackend, ScriptedEmbeddingBackend
from longdoc_retrieval.config import (
    ConfigError,
    PipelineConfig,
    apply_env_overrides,
    build_attention_backend,
    build_embedding_backend,
    build_recognizer,
    config_fingerprint,
    config_from_dict,
    load_config,
)
from longdoc_retrieval.entity import CapitalizedSpanRecognizer

SCRIPTED = {
    "attention": {"backend": "scripted", "layers": [0, 1]},
    "embedding": {"backend": "scripted"},
}


def _write(tmpdir, text, name="config.toml"):
    path = os.path.join(tmpdir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


class TestLoadConfig:
    """Tests for reading TOML config files."""

    def test_load(self):
        """Test that tables map onto the config fields."""
        with tempfile.TemporaryDirectory() as tmpdir:
            _write(tmpdir, "", "data.jsonl")
            path = _write(
                tmpdir,
                '[attention]\nbackend = "scripted"\nlayers = [13, 17, 21]\n'
                '[embedding]\nbackend = "scripted"\n'
                '[long_context]\nstrategy = "chunked"\nsegment_length = 512\n'
                "[retrieval]\nk = 5\n"
                "[eval]\nks = [1, 3]\nworkers = 2\n"
                '[paths]\ndataset = "data.jsonl"\n',
            )
            cfg = load_config(path, environ={})
            assert cfg.attention.layers == (13, 17, 21)
            assert cfg.long_context.strategy == "chunked"
            assert cfg.long_context.segment_length == 512
            assert cfg.k == 5
            assert cfg.ks == (1, 3)
            assert cfg.workers == 2
            assert cfg.dataset == os.path.join(tmpdir, "data.jsonl")
            assert cfg.output_dir == os.path.join(tmpdir, "results")
            assert cfg.source == path

    def test_missing_file(self):
        """Test that a missing config file is a config error."""
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.toml", environ={})

    def test_unparsable_file(self):
        """Test that broken TOML is a config error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = _write(tmpdir, "[attention\n")
            with pytest.raises(ConfigError):
                load_config(path, environ={})

    def test_env_override(self):
        """Test that LONGDOC_<TABLE>__<KEY> variables override file values."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = _write(
                tmpdir,
                "[attention]\n"
                'backend = "scripted"\n'
                "layers = [1]\n"
                "[embedding]\n"
                'backend = "scripted"\n'
                "[retrieval]\n"
                "k = 3\n",
            )
            environ = {"LONGDOC_RETRIEVAL__K": "7", "LONGDOC_ATTENTION__FAIL": "true"}
            cfg = load_config(path, environ=environ)
        assert cfg.k == 7
        assert cfg.attention.fail is True


class TestEnvOverrides:
    """Tests for apply_env_overrides."""

    def test_values_parsed_as_toml(self):
        """Test that override values are read as TOML scalars, else strings."""
        merged = apply_env_overrides(
            {"eval": {"ks": [1]}},
            {
                "LONGDOC_EVAL__KS": "[2, 4]",
                "LONGDOC_ATTENTION__MODEL_ID": "org/model",
                "LONGDOC_DEBUG": "1",
                "OTHER": "x",
            },
        )
        assert merged == {
            "eval": {"ks": [2, 4]},
            "attention": {"model_id": "org/model"},
        }

    def test_input_not_mutated(self):
        """Test that the original data is left alone."""
        data = {"retrieval": {"k": 1}}
        apply_env_overrides(data, {"LONGDOC_RETRIEVAL__K": "2"})
        assert data == {"retrieval": {"k": 1}}


class TestConfigFromDict:
    """Tests for building and validating configs."""

    def test_defaults(self):
        """Test the defaults with scripted backends."""
        cfg = config_from_dict(SCRIPTED)
        assert cfg.k == 3
        assert cfg.ks == (1, 2, 3, 5)
        assert cfg.views == "both"
        assert cfg.entities is True
        assert cfg.long_context.strategy == "none"

    def test_unknown_table(self):
        """Test that unknown tables are rejected."""
        with pytest.raises(ConfigError, match="Unknown table"):
            config_from_dict(dict(SCRIPTED, extra={}))

    def test_unknown_key(self):
        """Test that unknown keys are rejected with their names."""
        with pytest.raises(ConfigError, match="layer_ids"):
            config_from_dict({"attention": {"backend": "scripted", "layer_ids": [1]}})

    @pytest.mark.parametrize(
        "data",
        [
            dict(SCRIPTED, retrieval={"k": 0}),
            dict(SCRIPTED, retrieval={"views": "neither"}),
            dict(SCRIPTED, eval={"ks": []}),
            dict(SCRIPTED, eval={"workers": 0}),
            {
                "attention": {"backend": "scripted"},
                "embedding": {"backend": "scripted"},
            },
            {"attention": {"layers": [1]}, "embedding": {"backend": "scripted"}},
            dict(SCRIPTED, recognizer={"backend": "regex"}),
            dict(SCRIPTED, long_context={"strategy": "sliding"}),
            dict(SCRIPTED, paths={"dataset": "/nonexistent/data.jsonl"}),
        ],
    )
    def test_invalid(self, data):
        """Test that invalid settings raise ConfigError."""
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_layers_not_needed_without_attention(self):
        """Test that an embedding-only config needs no layers."""
        cfg = config_from_dict(
            {
                "embedding": {"backend": "scripted"},
                "retrieval": {"ablation": "emb_only"},
            }
        )
        assert cfg.views == "embedding"
        assert not cfg.uses_attention

    def test_extra_abbreviations(self):
        """Test that extra abbreviations extend the defaults."""
        segmentation = {"extra_abbreviations": ["Approx.", "Dept."]}
        cfg = config_from_dict(dict(SCRIPTED, segmentation=segmentation))
        assert "dept." in cfg.segmentation.abbreviations
        assert "mr." in cfg.segmentation.abbreviations


class TestAblation:
    """Tests for ablation arms."""

    @pytest.mark.parametrize(
        "arm,views,entities",
        [
            ("full", "both", True),
            (None, "both", True),
            ("attn_only", "attention", True),
            ("emb_only", "embedding", True),
            ("no_entity", "both", False),
        ],
    )
    def test_arms(self, arm, views, entities):
        """Test the views and entity switch of each arm."""
        cfg = PipelineConfig().with_ablation(arm)
        assert cfg.views == views
        assert cfg.entities is entities

    def test_unknown_arm(self):
        """Test that unknown arms are rejected."""
        with pytest.raises(ConfigError):
            PipelineConfig().with_ablation("no_attention")


class TestFingerprint:
    """Tests for the config fingerprint."""

    def test_stable_and_short(self):
        """Test that equal configs share a 16-character fingerprint."""
        first = config_from_dict(SCRIPTED, source="a.toml")
        second = config_from_dict(SCRIPTED, source="b.toml")
        assert config_fingerprint(first) == config_fingerprint(second)
        assert len(config_fingerprint(first)) == 16

    def test_changes_with_settings(self):
        """Test that a different k gives a different fingerprint."""
        first = config_from_dict(SCRIPTED)
        second = config_from_dict(dict(SCRIPTED, retrieval={"k": 4}))
        assert config_fingerprint(first) != config_fingerprint(second)


class TestFactories:
    """Tests for building backends from specs."""

    def test_scripted_backends(self):
        """Test that scripted specs build scripted backends with their options."""
        cfg = config_from_dict(
            {
                "attention": {
                    "backend": "scripted",
                    "layers": [0],
                    "fallback": "uniform",
                    "window_limit": 64,
                },
                "embedding": {"backend": "scripted", "fail": True},
            }
        )
        attention = build_attention_backend(cfg.attention)
        embedding = build_embedding_backend(cfg.embedding)
        assert isinstance(attention, ScriptedAttentionBackend)
        assert attention.fallback == "uniform"
        assert attention.window_limit == 64
        assert isinstance(embedding, ScriptedEmbeddingBackend)
        assert embedding.fail is True

    def test_default_recognizer(self):
        """Test that the capitalized-span recognizer is the default."""
        recognizer = build_recognizer(PipelineConfig().recognizer)
        assert isinstance(recognizer, CapitalizedSpanRecognizer)
