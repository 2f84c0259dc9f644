"""Cached token bags for every item and keyphrase of a world."""

from __future__ import annotations

import numpy as np

from .encoders import CrossBags, bag_matrix, tokenize
from .numerics import CrossBatch, PairBatch
from .synthworld import LabeledPair, SyntheticWorld


class PairFeatures:
    """Token bags addressed by item / keyphrase id.

    ``items`` bags hold category + title (the bi-encoder's item text);
    ``categories`` and ``titles`` are kept apart for the cross-encoder.
    """

    def __init__(self, categories, titles, keyphrases, vocab_size: int):
        self.vocab_size = vocab_size
        self.categories = categories
        self.titles = titles
        self.items = (categories + titles).tocsr()
        self.keyphrases = keyphrases

    @classmethod
    def from_texts(cls, categories: list[str], titles: list[str], keyphrases: list[str],
                   vocab_size: int = 4096) -> "PairFeatures":
        V = vocab_size
        cats = [tokenize(c, V) if c.strip() else np.zeros(0, np.int64) for c in categories]
        return cls(bag_matrix(cats, V), bag_matrix([tokenize(t, V) for t in titles], V),
                   bag_matrix([tokenize(k, V) for k in keyphrases], V), V)

    def pair_batch(self, pairs: list[LabeledPair], rows=None, source: str = "") -> PairBatch:
        sel = pairs if rows is None else [pairs[r] for r in rows]
        item_ids = np.fromiter((p.item_id for p in sel), np.int64, len(sel))
        kp_ids = np.fromiter((p.keyphrase_id for p in sel), np.int64, len(sel))
        values = np.fromiter((p.value for p in sel), np.float64, len(sel))
        return PairBatch(self.items[item_ids], self.keyphrases[kp_ids], values,
                         source or (sel[0].source if sel else ""))

    def cross_bags(self, item_ids, kp_ids) -> CrossBags:
        item_ids = np.asarray(item_ids, dtype=np.int64)
        kp_ids = np.asarray(kp_ids, dtype=np.int64)
        return CrossBags(self.keyphrases[kp_ids], self.categories[item_ids], self.titles[item_ids])

    def cross_batch(self, pairs: list[LabeledPair], rows=None) -> CrossBatch:
        sel = pairs if rows is None else [pairs[r] for r in rows]
        bags = self.cross_bags([p.item_id for p in sel], [p.keyphrase_id for p in sel])
        return CrossBatch(bags, np.array([p.value for p in sel], dtype=np.float64))


class WorldFeatures(PairFeatures):
    """Features for every item and keyphrase of a synthetic world."""

    def __init__(self, world: SyntheticWorld, vocab_size: int = 4096):
        self.world = world
        V = vocab_size
        cats = [tokenize(" ".join(it.category_tokens), V) for it in world.items]
        titles = [tokenize(" ".join(it.title_tokens), V) for it in world.items]
        super().__init__(bag_matrix(cats, V), bag_matrix(titles, V),
                         bag_matrix([tokenize(kp.text, V) for kp in world.keyphrases], V), V)
