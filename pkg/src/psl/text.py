"""Tokenization shared by BM25 retrieval, ROUGE-L and corpus statistics."""

from __future__ import annotations

import math
import re

_WORD = re.compile(r"[a-z0-9]+")
_PIECE = re.compile(r"[^\W_]+|[^\w\s]|_")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _WORD.findall(text.lower())


def estimate_tokens(text: str, multiplier: float = 1.0, chars_per_token: int = 4) -> int:
    """Rough LLM token count: whitespace/punctuation pieces, long runs split every few chars.

    A protein sequence is one whitespace piece but many model tokens, so
    alphanumeric runs cost ``ceil(len / chars_per_token)``.
    """
    n = 0
    for piece in _PIECE.findall(text):
        n += max(1, math.ceil(len(piece) / chars_per_token))
    return math.ceil(n * multiplier)
