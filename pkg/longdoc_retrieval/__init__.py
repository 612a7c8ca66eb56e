"""
longdoc-retrieval - paragraph retrieval from a single long document.

Sentences are scored two ways: by the cross-attention a causal language model
pays to them while reading the query, and by embedding similarity with the
query. Each view picks its top sentences and entities, and the union expands to
every paragraph that holds a selected sentence or mentions a selected entity.

The package also carries the analysis tooling used to choose retrieval layers
(per-layer gold-rank profiles, needle-in-a-haystack head counts) and an
evaluation harness for paragraph-level F-1 over a top-k sweep.
"""

import logging

from .version import __version__

logger = logging.getLogger(__name__)

__all__ = ["__version__"]
