"""Shared deterministic tokenizer.

One tokenizer serves the whole engine: BM25 indexing and search, passage
chunking boundaries, the dialog novelty gate, and the extractive generator.
Tokens are maximal runs of unicode alphanumerics (digits included,
underscore excluded), lowercased. Everything else is a separator.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics. Empty text gives []."""
    return _TOKEN_RE.findall(text.lower())


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character (start, end) of each token of ``text``, in order.

    Spans are computed on the original string so callers can slice
    original-case surface text back out.
    """
    return [m.span() for m in _TOKEN_RE.finditer(text)]
