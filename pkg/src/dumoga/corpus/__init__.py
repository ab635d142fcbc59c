"""Complex-query corpus construction from scene graphs."""
from .llm import ChatClient, LLMError, OfflineClient, TransportError, generate_query, offline_generate
from .pipeline import (
    CorpusStats, GeneratedQuery, apply_review, build_corpus, corpus_stats, export_review, import_review,
    is_ambiguous,
)
from .prompts import PromptBundle, PromptTemplate, build_prompt, make_bundle
from .rewrite import pluralize, rewrite_suffixes
from .triplets import (
    Lexicon, Triplet, UnknownPredicate, filter_candidates, object_references, target_triplets,
    triplets_to_sentences,
)

__all__ = [
    "apply_review",
    "build_corpus",
    "build_prompt",
    "ChatClient",
    "corpus_stats",
    "CorpusStats",
    "export_review",
    "filter_candidates",
    "generate_query",
    "GeneratedQuery",
    "import_review",
    "is_ambiguous",
    "Lexicon",
    "LLMError",
    "make_bundle",
    "object_references",
    "offline_generate",
    "OfflineClient",
    "pluralize",
    "PromptBundle",
    "PromptTemplate",
    "rewrite_suffixes",
    "target_triplets",
    "TransportError",
    "Triplet",
    "triplets_to_sentences",
    "UnknownPredicate",
]
