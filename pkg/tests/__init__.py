"""Tests for longdoc-retrieval."""
