"""Integration tests for longdoc-retrieval."""
