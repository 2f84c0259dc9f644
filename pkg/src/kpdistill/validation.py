"""Input checks for the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, ShapeError
from .synthworld import SOURCES


def check_pair_texts(X) -> list[tuple[str, str]]:
    rows = [tuple(r) for r in X]
    if not rows:
        raise ShapeError("empty input")
    if any(len(r) != 2 for r in rows):
        raise ShapeError("each row must be an (item_text, keyphrase_text) pair")
    return [(str(a), str(b)) for a, b in rows]


def check_triples(X) -> list[tuple[str, str, str]]:
    rows = [tuple(r) for r in X]
    if not rows:
        raise ShapeError("empty input")
    if any(len(r) != 3 for r in rows):
        raise ShapeError("each row must be a (keyphrase, category, title) triple")
    return [(str(a), str(b), str(c)) for a, b, c in rows]


def check_sources(sources, n: int) -> list[str]:
    if sources is None:
        return ["CTR"] * n
    if isinstance(sources, str):
        sources = [sources] * n
    sources = [str(s) for s in sources]
    if len(sources) != n:
        raise ShapeError(f"{len(sources)} source tags for {n} rows")
    bad = sorted(set(sources) - set(SOURCES))
    if bad:
        raise ConfigurationError(f"unknown label source {bad[0]!r}", field="sources")
    return sources


def check_unit_rows(X, atol: float = 1e-6) -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        raise ShapeError("rows must be unit-norm embeddings")
    return X
