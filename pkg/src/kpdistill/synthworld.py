"""Synthetic advertiser marketplace with biased click, search-relevance and judge labels.

Items and keyphrases are mixtures over latent topics.  Ground-truth relevance
is the cosine of the two topic-weight vectors against a threshold; everything
else (search-relevance scores, clicks, judge answers) is a noisy or biased
view of that ground truth.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, InvalidWorldError

SOURCES = ("CTR", "SR", "LLM", "KD")


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 7
    n_topics: int = 8
    n_items: int = 200
    n_keyphrases: int = 500
    vocab_size: int = 80
    title_len_range: tuple[int, int] = (6, 10)
    keyphrase_len_range: tuple[int, int] = (1, 3)
    relevance_threshold: float = 0.35
    sr_scale: float = 8.0
    noise_sd: float = 0.5
    max_topics_per_doc: int = 2

    def __post_init__(self):
        for name in ("n_topics", "n_items", "n_keyphrases", "vocab_size", "max_topics_per_doc"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError("must be >= 1", field=name)
        if self.vocab_size < self.n_topics:
            raise ConfigurationError("must be >= n_topics", field="vocab_size")
        for name in ("title_len_range", "keyphrase_len_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigurationError(f"invalid range ({lo}, {hi})", field=name)
        if not 0.0 <= self.relevance_threshold <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", field="relevance_threshold")
        if self.noise_sd < 0:
            raise ConfigurationError("must be >= 0", field="noise_sd")
        object.__setattr__(self, "title_len_range", tuple(self.title_len_range))
        object.__setattr__(self, "keyphrase_len_range", tuple(self.keyphrase_len_range))


@dataclass(frozen=True)
class ItemDoc:
    id: int
    title_tokens: tuple[str, ...]
    category_tokens: tuple[str, ...]
    topic_weights: dict[int, float]

    @property
    def text(self) -> str:
        """Category name followed by the title, as fed to the encoders."""
        return " ".join(self.category_tokens + self.title_tokens)


@dataclass(frozen=True)
class Keyphrase:
    id: int
    tokens: tuple[str, ...]
    topic_weights: dict[int, float]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class ClickLog:
    item_id: int
    keyphrase_id: int
    impressions: int
    clicks: int
    rank: int


@dataclass(frozen=True)
class LabeledPair:
    item_id: int
    keyphrase_id: int
    source: str
    value: float

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigurationError(f"unknown label source {self.source!r}", field="src")
        v = self.value
        if self.source == "CTR" and v != 1.0:
            raise ConfigurationError("CTR pairs are positives only", field="v")
        if self.source in ("SR", "LLM") and v not in (0.0, 1.0):
            raise ConfigurationError(f"{self.source} labels must be 0 or 1", field="v")
        if not 0.0 <= v <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", field="v")

    def to_json(self) -> str:
        return json.dumps({"item": self.item_id, "kp": self.keyphrase_id,
                           "src": self.source, "v": self.value})

    @classmethod
    def from_json(cls, line: str) -> "LabeledPair":
        d = json.loads(line)
        return cls(int(d["item"]), int(d["kp"]), str(d["src"]), float(d["v"]))


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: WorldConfig
    topics: tuple[int, ...]
    items: tuple[ItemDoc, ...]
    keyphrases: tuple[Keyphrase, ...]
    relevance: np.ndarray
    sr_score: np.ndarray
    affinity: np.ndarray = field(repr=False)

    @property
    def seed(self) -> int:
        return self.config.seed

    def __eq__(self, other):
        if not isinstance(other, SyntheticWorld):
            return NotImplemented
        return (self.config == other.config and self.items == other.items
                and self.keyphrases == other.keyphrases
                and np.array_equal(self.relevance, other.relevance)
                and np.array_equal(self.sr_score, other.sr_score))

    __hash__ = None

    def item(self, item_id: int) -> ItemDoc:
        if not 0 <= item_id < len(self.items):
            raise KeyError(f"unknown item id {item_id}")
        return self.items[item_id]

    def keyphrase(self, keyphrase_id: int) -> Keyphrase:
        if not 0 <= keyphrase_id < len(self.keyphrases):
            raise KeyError(f"unknown keyphrase id {keyphrase_id}")
        return self.keyphrases[keyphrase_id]

    def with_sr_score(self, sr_score) -> "SyntheticWorld":
        """Copy of the world with a replaced search-relevance matrix."""
        sr = np.array(sr_score, dtype=np.float64)
        sr.setflags(write=False)
        return dataclasses.replace(self, sr_score=sr)

    def to_dict(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "items": [{"id": it.id, "title": list(it.title_tokens),
                       "category": list(it.category_tokens),
                       "topics": {str(k): v for k, v in it.topic_weights.items()}}
                      for it in self.items],
            "keyphrases": [{"id": kp.id, "tokens": list(kp.tokens),
                            "topics": {str(k): v for k, v in kp.topic_weights.items()}}
                           for kp in self.keyphrases],
            "relevance": self.relevance.astype(int).tolist(),
            "sr_score": self.sr_score.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticWorld":
        d = json.loads(text)
        cfg = WorldConfig(**d["config"])
        items = tuple(ItemDoc(it["id"], tuple(it["title"]), tuple(it["category"]),
                              {int(k): v for k, v in it["topics"].items()})
                      for it in d["items"])
        kps = tuple(Keyphrase(kp["id"], tuple(kp["tokens"]),
                              {int(k): v for k, v in kp["topics"].items()})
                    for kp in d["keyphrases"])
        rel = np.array(d["relevance"], dtype=bool)
        sr = np.array(d["sr_score"], dtype=np.float64)
        aff = _topic_cosine(_dense(items, cfg.n_topics), _dense(kps, cfg.n_topics))
        for a in (rel, sr, aff):
            a.setflags(write=False)
        return cls(cfg, tuple(range(cfg.n_topics)), items, kps, rel, sr, aff)


def _dense(docs, n_topics) -> np.ndarray:
    out = np.zeros((len(docs), n_topics))
    for row, doc in enumerate(docs):
        for t, w in doc.topic_weights.items():
            out[row, t] = w
    return out


def _topic_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return an @ bn.T


def _sample_topic_weights(rng, n_topics, max_topics) -> dict[int, float]:
    n = 1 if max_topics == 1 or n_topics == 1 else int(rng.integers(1, min(max_topics, n_topics) + 1))
    chosen = np.sort(rng.choice(n_topics, size=n, replace=False))
    w = rng.dirichlet(np.full(n, 2.0)) if n > 1 else np.ones(1)
    return {int(t): float(x) for t, x in zip(chosen, w)}


def _sample_tokens(rng, weights, words_by_topic, length) -> tuple[str, ...]:
    topics = np.array(list(weights.keys()))
    probs = np.array(list(weights.values()))
    picks = rng.choice(topics, size=length, p=probs / probs.sum())
    return tuple(words_by_topic[t][int(rng.integers(len(words_by_topic[t])))] for t in picks)


def generate_world(config: WorldConfig | dict | None = None, **overrides) -> SyntheticWorld:
    """Build a deterministic world from ``config`` (dict keys mirror :class:`WorldConfig`)."""
    if config is None:
        config = WorldConfig(**overrides)
    elif isinstance(config, dict):
        unknown = set(config) - {f.name for f in dataclasses.fields(WorldConfig)}
        if unknown:
            raise ConfigurationError("unknown key", field=sorted(unknown)[0])
        config = WorldConfig(**{**config, **overrides})
    elif overrides:
        config = dataclasses.replace(config, **overrides)

    rng = np.random.default_rng(config.seed)
    T = config.n_topics
    words_by_topic = {t: [f"w{j}" for j in range(t, config.vocab_size, T)] for t in range(T)}

    items = []
    for i in range(config.n_items):
        weights = _sample_topic_weights(rng, T, config.max_topics_per_doc)
        length = int(rng.integers(config.title_len_range[0], config.title_len_range[1] + 1))
        title = _sample_tokens(rng, weights, words_by_topic, length)
        main = max(weights, key=lambda t: (weights[t], -t))
        items.append(ItemDoc(i, title, (f"cat{main}",), weights))

    keyphrases = []
    for k in range(config.n_keyphrases):
        weights = _sample_topic_weights(rng, T, config.max_topics_per_doc)
        length = int(rng.integers(config.keyphrase_len_range[0], config.keyphrase_len_range[1] + 1))
        keyphrases.append(Keyphrase(k, _sample_tokens(rng, weights, words_by_topic, length), weights))

    affinity = _topic_cosine(_dense(items, T), _dense(keyphrases, T))
    relevance = affinity >= config.relevance_threshold - 1e-12
    noise = rng.normal(0.0, config.noise_sd, size=affinity.shape)
    sr_score = 1.0 / (1.0 + np.exp(-(config.sr_scale * (affinity - config.relevance_threshold) + noise)))
    for a in (affinity, relevance, sr_score):
        a.setflags(write=False)
    return SyntheticWorld(config, tuple(range(T)), tuple(items), tuple(keyphrases),
                          relevance, sr_score, affinity)


# --------------------------------------------------------------------------- logs


@dataclass(frozen=True)
class LogConfig:
    n_impressions: int = 3000
    position_decay: float = 0.85
    sr_filter_threshold: float = 0.6
    ctr_threshold: float = 0.05
    min_impressions: int = 20
    min_clicks: int = 2
    popularity_sd: float = 0.75

    def __post_init__(self):
        for name in ("sr_filter_threshold", "ctr_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError("must lie in [0, 1]", field=name)
        if not 0.0 < self.position_decay <= 1.0:
            raise ConfigurationError("must lie in (0, 1]", field="position_decay")
        for name in ("n_impressions", "min_impressions", "min_clicks"):
            if getattr(self, name) < 0:
                raise ConfigurationError("must be >= 0", field=name)


def simulate_search_logs(world: SyntheticWorld, config: LogConfig | None = None,
                         **overrides) -> tuple[list[ClickLog], list[LabeledPair]]:
    """Simulate position- and filter-biased search traffic.

    Only pairs whose search-relevance score clears ``sr_filter_threshold`` are
    ever shown.  Each item's traffic is spread uniformly over its shown
    keyphrases; a shown pair at rank ``r`` is clicked per impression with
    probability ``relevant * position_decay**r``.

    Returns the click logs and the CTR-positive pairs (positives only).
    """
    config = dataclasses.replace(config or LogConfig(), **overrides)
    sr = np.asarray(world.sr_score)
    if sr.size == 0 or sr.shape != world.relevance.shape:
        raise InvalidWorldError("world has an empty or mis-shaped sr_score matrix")
    rng = np.random.default_rng([world.seed, 1])
    popularity = rng.lognormal(0.0, config.popularity_sd, size=sr.shape[0])
    popularity /= popularity.mean()

    logs, positives = [], []
    for i in range(sr.shape[0]):
        shown = np.flatnonzero(sr[i] >= config.sr_filter_threshold)
        if shown.size == 0:
            continue
        shown = shown[np.lexsort((shown, -sr[i, shown]))]
        traffic = int(rng.poisson(config.n_impressions * popularity[i]))
        impressions = rng.multinomial(traffic, np.full(shown.size, 1.0 / shown.size))
        rel = world.relevance[i, shown].astype(np.float64)
        p_click = rel * config.position_decay ** np.arange(shown.size)
        clicks = rng.binomial(impressions, p_click)
        for rank, (k, n_imp, n_clk) in enumerate(zip(shown, impressions, clicks)):
            if n_imp == 0:
                continue
            logs.append(ClickLog(i, int(k), int(n_imp), int(n_clk), rank))
            if (n_clk / n_imp >= config.ctr_threshold and n_imp >= config.min_impressions
                    and n_clk >= config.min_clicks):
                positives.append(LabeledPair(i, int(k), "CTR", 1.0))
    return logs, positives


# --------------------------------------------------------------------------- labels


def _pair_ids(pairs) -> list[tuple[int, int]]:
    out = []
    for p in pairs:
        if isinstance(p, LabeledPair):
            out.append((p.item_id, p.keyphrase_id))
        else:
            out.append((int(p[0]), int(p[1])))
    return out


def sr_labels(world: SyntheticWorld, pairs, threshold: float) -> list[LabeledPair]:
    """Binary search-relevance labels; positive iff ``sr_score >= threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError("must lie in [0, 1]", field="threshold")
    return [LabeledPair(i, k, "SR", 1.0 if world.sr_score[i, k] >= threshold else 0.0)
            for i, k in _pair_ids(pairs)]


def label_counts(pairs: Iterable[LabeledPair]) -> dict[float, int]:
    counts = {0.0: 0, 1.0: 0}
    for p in pairs:
        counts[p.value] = counts.get(p.value, 0) + 1
    return counts


def _unit_hash(*parts: int) -> float:
    digest = hashlib.blake2b(",".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def judge(world: SyntheticWorld, item_id: int, keyphrase_id: int, noise_rate: float = 0.05) -> int:
    """Noisy relevance oracle: ground truth flipped with probability ``noise_rate``.

    The flip is a hash of (seed, item, keyphrase), so repeated queries agree.
    """
    if not 0.0 <= noise_rate < 0.5:
        raise ConfigurationError("must lie in [0, 0.5)", field="noise_rate")
    world.item(item_id)
    world.keyphrase(keyphrase_id)
    truth = bool(world.relevance[item_id, keyphrase_id])
    flip = _unit_hash(world.seed, item_id, keyphrase_id) < noise_rate
    return int(truth != flip)


def judge_labels(world: SyntheticWorld, pairs, noise_rate: float = 0.05) -> list[LabeledPair]:
    return [LabeledPair(i, k, "LLM", float(judge(world, i, k, noise_rate)))
            for i, k in _pair_ids(pairs)]


# --------------------------------------------------------------------------- splits


def split_items(world: SyntheticWorld, fractions: Sequence[float] = (0.7, 0.15, 0.15),
                seed: int | None = None) -> list[np.ndarray]:
    """Partition item ids into disjoint sorted groups (train / validation / test)."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigurationError("fractions must be non-negative and sum to 1", field="fractions")
    rng = np.random.default_rng([world.seed if seed is None else seed, 2])
    order = rng.permutation(len(world.items))
    cuts = np.round(np.cumsum(fractions)[:-1] * len(order)).astype(int)
    return [np.sort(part) for part in np.split(order, cuts)]


def sample_pairs(world: SyntheticWorld, item_ids, n: int, seed: int) -> list[tuple[int, int]]:
    """Sample ``n`` distinct (item, keyphrase) pairs over the given items."""
    item_ids = np.asarray(item_ids)
    total = item_ids.size * len(world.keyphrases)
    n = min(n, total)
    rng = np.random.default_rng([seed, 3])
    flat = np.sort(rng.choice(total, size=n, replace=False))
    n_kp = len(world.keyphrases)
    return [(int(item_ids[f // n_kp]), int(f % n_kp)) for f in flat]


def all_pairs(world: SyntheticWorld, item_ids) -> list[tuple[int, int]]:
    return [(int(i), k) for i in item_ids for k in range(len(world.keyphrases))]


# --------------------------------------------------------------------------- io


def write_pairs(path, pairs: Iterable[LabeledPair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")


def read_pairs(path) -> list[LabeledPair]:
    with open(path) as fh:
        return [LabeledPair.from_json(line) for line in fh if line.strip()]
