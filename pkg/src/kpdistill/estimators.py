"""scikit-learn compatible wrappers around the encoders, trainer and index.

These accept raw text so the models compose with ordinary sklearn tooling
(``get_params``/``set_params``, ``clone``, pipelines).  The world-level
pipeline in :mod:`kpdistill.pipeline` uses the functional API directly.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import losses as L
from .encoders import BiEncoderParams, CrossEncoderParams, encode_texts
from .distillation import cross_scores
from .features import PairFeatures
from .retrieval import build_index, knn_batch
from .synthworld import LabeledPair
from .trainer import DEFAULT_TASK_MAP, TrainConfig, train_bi, train_cross
from .validation import check_pair_texts, check_sources, check_triples, check_unit_rows


def _intern(texts):
    """Map each distinct text to a dense id, preserving first-seen order."""
    ids, table = [], {}
    for t in texts:
        ids.append(table.setdefault(t, len(table)))
    return ids, list(table)


class CrossEncoderScorer(ClassifierMixin, BaseEstimator):
    """Joint (keyphrase, category, title) relevance classifier.

    ``X`` is a sequence of ``(keyphrase, category, title)`` strings; ``y`` binary.
    """

    def __init__(self, vocab_size=4096, hidden=32, epochs=6, batch_size=32,
                 learning_rate=3e-3, optimizer="adam", random_state=0):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    def _features(self, X):
        kps, cats, titles = zip(*X)
        return PairFeatures.from_texts(list(cats), list(titles), list(kps), self.vocab_size)

    def fit(self, X, y):
        X = check_triples(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        feats = self._features(X)
        pairs = [LabeledPair(j, j, "LLM", float(v)) for j, v in enumerate(y)]
        cfg = TrainConfig(batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state,
                          matryoshka=None, optimizer=self.optimizer, learning_rate=self.learning_rate)
        params = CrossEncoderParams.init(self.vocab_size, self.hidden, seed=self.random_state)
        self.params_, self.history_ = train_cross(params, pairs, feats, cfg)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        """Relevance score in [0, 1] per row."""
        check_is_fitted(self, "params_")
        X = check_triples(X)
        idx = np.arange(len(X))
        return cross_scores(self.params_, self._features(X), idx, idx)

    def predict_proba(self, X):
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.5).astype(int)


class BiEncoderEmbedder(TransformerMixin, BaseEstimator):
    """Dual-tower text embedder trained with one loss per label source.

    ``fit(X, y, sources=...)`` takes ``(item_text, keyphrase_text)`` pairs,
    their label values and a label-source tag per row (``CTR``, ``SR``,
    ``LLM`` or ``KD``).  ``transform`` maps texts to unit embeddings.
    """

    def __init__(self, vocab_size=4096, hidden=32, dim=256, task_map=None,
                 matryoshka_dims=(64, 128, 256), epochs=6, batch_size=32, learning_rate=1e-3,
                 temperature=0.05, margin=0.5, cosent_scale=20.0, optimizer="adam",
                 random_state=0):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.dim = dim
        self.task_map = task_map
        self.matryoshka_dims = matryoshka_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.temperature = temperature
        self.margin = margin
        self.cosent_scale = cosent_scale
        self.optimizer = optimizer
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        mat = L.MatryoshkaConfig(tuple(self.matryoshka_dims)) if self.matryoshka_dims else None
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state,
            task_map=dict(self.task_map or DEFAULT_TASK_MAP), matryoshka=mat,
            loss_configs={"mnr": L.MnrConfig(self.temperature),
                          "contrastive": L.ContrastiveConfig(self.margin),
                          "cosent": L.CosentConfig(self.cosent_scale)},
            optimizer=self.optimizer, learning_rate=self.learning_rate)

    def fit(self, X, y=None, sources=None):
        X = check_pair_texts(X)
        y = np.ones(len(X)) if y is None else np.asarray(y, dtype=np.float64).ravel()
        sources = check_sources(sources, len(X))
        cfg = self._train_config()
        item_ids, item_texts = _intern([a for a, _ in X])
        kp_ids, kp_texts = _intern([b for _, b in X])
        feats = PairFeatures.from_texts([""] * len(item_texts), item_texts, kp_texts, self.vocab_size)
        datasets: dict[str, list[LabeledPair]] = {}
        for i, k, s, v in zip(item_ids, kp_ids, sources, y):
            datasets.setdefault(s, []).append(LabeledPair(i, k, s, float(v)))
        params = BiEncoderParams.init(self.vocab_size, self.hidden, self.dim, seed=self.random_state,
                                      min_prefix=cfg.matryoshka.dims[0] if cfg.matryoshka else 1)
        self.params_, self.history_ = train_bi(params, datasets, feats, cfg)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode_texts(self.params_, [str(t) for t in X])

    def score_pairs(self, X):
        """Cosine similarity per ``(item_text, keyphrase_text)`` row."""
        X = check_pair_texts(X)
        u = self.transform([a for a, _ in X])
        v = self.transform([b for _, b in X])
        return np.sum(u * v, axis=1)


class CosineKNN(BaseEstimator):
    """Exact cosine nearest neighbours with optional nested-prefix truncation."""

    def __init__(self, n_neighbors=20, dim_prefix=None):
        self.n_neighbors = n_neighbors
        self.dim_prefix = dim_prefix

    def fit(self, X, y=None, ids=None):
        X = check_unit_rows(X)
        self.index_ = build_index(X, self.dim_prefix, ids=ids)
        return self

    def kneighbors(self, X, n_neighbors=None):
        """Return ``(scores, ids)`` arrays of shape (n_queries, k)."""
        check_is_fitted(self, "index_")
        k = self.n_neighbors if n_neighbors is None else n_neighbors
        hits = knn_batch(self.index_, np.atleast_2d(np.asarray(X, dtype=np.float64)), k)
        ids = np.array([[i for i, _ in row] for row in hits], dtype=np.int64)
        scores = np.array([[s for _, s in row] for row in hits])
        return scores, ids
