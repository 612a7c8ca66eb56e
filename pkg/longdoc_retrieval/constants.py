"""
Shared constants for longdoc-retrieval package.

This module centralizes all constants to avoid duplication across modules.
"""

# Prefix for environment variable overrides (LONGDOC_RETRIEVAL__K=5)
ENV_PREFIX = "LONGDOC_"

# Exit codes for the command-line interface
EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_BACKEND_ERROR = 3

# Default top-k sweep for evaluation
DEFAULT_KS = (1, 2, 3, 5)
DEFAULT_K = 3

# Long-context strategies
STRATEGIES = ("none", "chunked", "cascading")

# Share of a chunk re-read by the next one when chunk overlap is unset
DEFAULT_OVERLAP_RATIO = 0.25

# Number of sub-caches in the cascading retention policy
DEFAULT_CASCADE_STAGES = 4

# Which scoring views are active
VIEWS = ("both", "attention", "embedding")

# Ablation switch names accepted on the command line
ABLATIONS = ("attn_only", "emb_only", "no_entity")
ABLATION_ARMS = ("full",) + ABLATIONS

# Sentence segmentation
TERMINAL_PUNCTUATION = ".!?"
CLOSING_CHARS = "\"')]}’”"
ABBREVIATIONS = frozenset(
    {
        "mr.",
        "mrs.",
        "ms.",
        "dr.",
        "prof.",
        "sr.",
        "jr.",
        "st.",
        "vs.",
        "etc.",
        "e.g.",
        "i.e.",
        "cf.",
        "al.",
        "fig.",
        "eq.",
        "no.",
        "vol.",
        "inc.",
        "ltd.",
        "co.",
        "corp.",
        "approx.",
        "jan.",
        "feb.",
        "mar.",
        "apr.",
        "jun.",
        "jul.",
        "aug.",
        "sep.",
        "sept.",
        "oct.",
        "nov.",
        "dec.",
        "u.s.",
        "u.k.",
    }
)

# Single capitalized words that start sentences without naming anything
SENTENCE_INITIAL_STOPWORDS = frozenset(
    {
        "A",
        "An",
        "The",
        "This",
        "That",
        "These",
        "Those",
        "It",
        "Its",
        "In",
        "On",
        "At",
        "As",
        "By",
        "For",
        "From",
        "If",
        "When",
        "While",
        "But",
        "And",
        "Or",
        "So",
        "He",
        "She",
        "They",
        "We",
        "I",
        "You",
        "There",
        "Here",
        "However",
        "After",
        "Before",
        "During",
        "Although",
        "Because",
        "Since",
        "Each",
        "All",
        "Some",
        "Many",
        "Most",
        "What",
        "Which",
        "Who",
        "How",
        "Why",
        "Where",
    }
)

# Retrieval-time prompt; the document and query are tokenized separately so
# their token positions inside the prompt are known exactly.
DEFAULT_PROMPT_TEMPLATE = (
    "You are an AI assistant. Read the article and find the information "
    "needed to answer the question.\n\nArticle: {document}\n\nQuestion: {query}"
)

DEFAULT_EMBEDDING_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_SPACY_MODEL = "en_core_web_sm"
DEFAULT_EMBEDDING_BATCH_SIZE = 32

# Dimension of hash-seeded vectors from the scripted embedding backend
SCRIPTED_EMBEDDING_DIM = 16
