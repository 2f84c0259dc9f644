"""Exact cosine top-k search over keyphrase embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoders import BiEncoderParams, bi_forward, matryoshka_prefix, read_arrays, write_arrays
from .exceptions import ConfigurationError, EmptyIndexError, ShapeError, StaleIndexError


@dataclass(frozen=True, eq=False)
class Index:
    ids: np.ndarray
    matrix: np.ndarray
    dim_prefix: int
    checksum: str = ""

    def __len__(self):
        return self.ids.size


@dataclass(frozen=True)
class RetrievalResult:
    item_id: int
    hits: tuple[tuple[int, float], ...]

    @property
    def ids(self) -> list[int]:
        return [k for k, _ in self.hits]

    def to_json(self) -> str:
        return json.dumps({"item": self.item_id, "kps": [[k, s] for k, s in self.hits]})


def build_index(embeddings, dim_prefix: int | None = None, ids=None, checksum: str = "") -> Index:
    """Truncate rows to ``dim_prefix`` (re-normalised) and freeze them.

    ``checksum`` records which student checkpoint produced the embeddings.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise EmptyIndexError("need at least one embedding row")
    d = emb.shape[1]
    dim_prefix = d if dim_prefix is None else int(dim_prefix)
    if not 1 <= dim_prefix <= d:
        raise ConfigurationError(f"dim_prefix {dim_prefix} outside [1, {d}]", field="dim_prefix")
    matrix = emb.copy() if dim_prefix == d else matryoshka_prefix(emb, dim_prefix)
    ids = np.arange(emb.shape[0], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64).copy()
    if ids.shape != (emb.shape[0],) or np.unique(ids).size != ids.size:
        raise ShapeError("ids must be unique and match the number of rows")
    matrix.setflags(write=False)
    ids.setflags(write=False)
    return Index(ids, matrix, dim_prefix, checksum)


def _query_matrix(index: Index, queries) -> np.ndarray:
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] < index.dim_prefix:
        raise ShapeError(f"query dim {q.shape[1]} below index prefix {index.dim_prefix}")
    return matryoshka_prefix(q, index.dim_prefix)


def _top_k(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    k = min(k, scores.size)
    if k < scores.size:
        # Keep every row tied with the k-th best so id tie-breaking stays exact.
        kth = np.partition(-scores, k - 1)[k - 1]
        cand = np.flatnonzero(-scores <= kth)
    else:
        cand = np.arange(scores.size)
    order = np.lexsort((ids[cand], -scores[cand]))
    return cand[order[:k]]


def knn_batch(index: Index, queries, k: int) -> list[list[tuple[int, float]]]:
    if len(index) == 0:
        raise EmptyIndexError("index is empty")
    if k < 1:
        raise ConfigurationError("must be >= 1", field="k")
    q = _query_matrix(index, queries)
    scores = q @ index.matrix.T
    out = []
    for row in scores:
        top = _top_k(row, index.ids, k)
        out.append([(int(index.ids[j]), float(row[j])) for j in top])
    return out


def knn(index: Index, query, k: int) -> list[tuple[int, float]]:
    """Exact top-``k`` ids by cosine; ties go to the smaller id."""
    return knn_batch(index, np.asarray(query)[None, :], k)[0]


def retrieve_for_items(params: BiEncoderParams, item_ids, index: Index, features, k: int = 20,
                       batch: int = 1024) -> list[RetrievalResult]:
    """Embed items (category + title) with the student and query the index."""
    if index.checksum and index.checksum != params.checksum():
        raise StaleIndexError("index was built from a different student checkpoint")
    item_ids = np.asarray(item_ids, dtype=np.int64)
    results = []
    for start in range(0, item_ids.size, batch):
        chunk = item_ids[start:start + batch]
        emb, _ = bi_forward(params, features.items[chunk])
        for item, hits in zip(chunk, knn_batch(index, emb, k)):
            results.append(RetrievalResult(int(item), tuple(hits)))
    return results


def index_student(params: BiEncoderParams, features, dim_prefix: int | None = None) -> Index:
    emb, _ = bi_forward(params, features.keyphrases)
    return build_index(emb, dim_prefix, checksum=params.checksum())


def save_index(path, index: Index) -> None:
    meta = json.dumps({"dim_prefix": index.dim_prefix, "checksum": index.checksum})
    with open(path, "wb") as fh:
        fh.write(write_arrays("index:" + meta, {"ids": index.ids, "matrix": index.matrix}))


def load_index(path) -> Index:
    with open(path, "rb") as fh:
        kind, arrays = read_arrays(fh.read())
    if not kind.startswith("index:"):
        raise ShapeError(f"not an index file (kind {kind!r})")
    meta = json.loads(kind[len("index:"):])
    matrix, ids = arrays["matrix"], arrays["ids"]
    matrix.setflags(write=False)
    ids.setflags(write=False)
    return Index(ids, matrix, int(meta["dim_prefix"]), meta["checksum"])


def write_results(path, results: list[RetrievalResult]) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")
