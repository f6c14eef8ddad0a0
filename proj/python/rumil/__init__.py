"""Roman Urdu sentiment toolkit."""

from ._core import (
    BUILTIN_RULES,
    LABELS,
    RumilError,
    Embeddings,
    HybridModel,
    ShallowModel,
    Vocabulary,
    build_vocab,
    collapse_stress,
    evaluate,
    fit_shallow,
    load_embeddings,
    normalize,
    normalize_tokens,
    run_cli,
    stratified_split,
    tokenize,
    train_embeddings,
)

__all__ = [
    "BUILTIN_RULES",
    "LABELS",
    "RumilError",
    "Embeddings",
    "HybridModel",
    "ShallowModel",
    "Vocabulary",
    "build_vocab",
    "collapse_stress",
    "evaluate",
    "fit_shallow",
    "load_embeddings",
    "normalize",
    "normalize_tokens",
    "run_cli",
    "stratified_split",
    "tokenize",
    "train_embeddings",
]
