"""Assistant scoring of student training pairs, and the score-distribution diagnostic."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .encoders import CrossEncoderParams, cross_forward, sigmoid
from .exceptions import EmptyInputError, UntrainedModelError
from .features import PairFeatures
from .synthworld import LabeledPair, SyntheticWorld, _unit_hash, judge


def _unique_pairs(pairs) -> list[tuple[int, int]]:
    seen, out = set(), []
    for p in pairs:
        key = (p.item_id, p.keyphrase_id) if isinstance(p, LabeledPair) else (int(p[0]), int(p[1]))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def cross_scores(params: CrossEncoderParams, features: PairFeatures, item_ids, kp_ids,
                 chunk: int = 4096) -> np.ndarray:
    """Assistant scores in [0, 1] for aligned item / keyphrase id arrays."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    kp_ids = np.asarray(kp_ids, dtype=np.int64)
    out = np.empty(item_ids.size)
    for start in range(0, item_ids.size, chunk):
        sl = slice(start, start + chunk)
        logits, _ = cross_forward(params, features.cross_bags(item_ids[sl], kp_ids[sl]))
        out[sl] = sigmoid(logits)
    return out


def kd_score(assistant, pairs, features: PairFeatures, history=None,
             allow_untrained: bool = False) -> list[LabeledPair]:
    """Label every distinct pair with the assistant's score (source ``KD``).

    ``assistant`` is either a fitted :class:`~kpdistill.estimators.CrossEncoderScorer`
    or raw :class:`CrossEncoderParams` together with their training ``history``.
    Duplicates keep their first position.
    """
    params = getattr(assistant, "params_", assistant)
    history = getattr(assistant, "history_", history)
    if not isinstance(params, CrossEncoderParams):
        raise UntrainedModelError("assistant has no fitted cross-encoder parameters")
    if not allow_untrained and (history is None or not history.steps):
        raise UntrainedModelError(
            "assistant has no training history; train it first or pass allow_untrained=True")
    keys = _unique_pairs(pairs)
    if not keys:
        return []
    items, kps = zip(*keys)
    scores = cross_scores(params, features, items, kps)
    return [LabeledPair(i, k, "KD", float(s)) for (i, k), s in zip(keys, scores)]


def teacher_soft_scores(world: SyntheticWorld, pairs, noise_rate: float = 0.1,
                        yes_bias: float = 3.0, sharpness: float = 4.0) -> np.ndarray:
    """Simulated yes-probability of a generative judge (softmax over yes/no logits).

    The logits follow the judge's binary answer but carry a strong "yes"
    bias, which piles mass on the upper extreme.  Used only to contrast
    against assistant scores in :func:`score_distribution_report`.
    """
    out = []
    for i, k in _unique_pairs(pairs):
        answer = judge(world, i, k, noise_rate)
        jitter = 2.0 * _unit_hash(world.seed, i, k, 99) - 1.0
        out.append(yes_bias + sharpness * (2 * answer - 1) * 0.5 + jitter)
    return sigmoid(np.array(out))


@dataclass
class DistributionReport:
    edges: list[float]
    mass_a: list[float]
    mass_b: list[float]
    abs_diff: list[float]
    extreme_ratio_a: float
    extreme_ratio_b: float
    extreme_balance_a: float
    extreme_balance_b: float
    shape_a: str
    shape_b: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _shape(mass: np.ndarray) -> tuple[float, float, str]:
    lo, hi = mass[0], mass[-1]
    ratio = float(lo + hi)
    balance = float(min(lo, hi) / max(lo, hi)) if max(lo, hi) > 0 else 1.0
    return ratio, balance, "even" if balance >= 0.5 else "peaked"


def score_distribution_report(scores_a, scores_b, n_bins: int = 20) -> DistributionReport:
    """Histogram two score sets over [0, 1] and summarise their extreme bins.

    ``extreme_ratio`` is the mass in the first and last bins; ``extreme_balance``
    is min/max of those two masses, and a set is called ``even`` when the
    balance is at least 0.5.
    """
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyInputError("both score sets must be non-empty")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    ma = np.histogram(np.clip(a, 0.0, 1.0), bins=edges)[0] / a.size
    mb = np.histogram(np.clip(b, 0.0, 1.0), bins=edges)[0] / b.size
    ra, ba, sa = _shape(ma)
    rb, bb, sb = _shape(mb)
    return DistributionReport(edges.tolist(), ma.tolist(), mb.tolist(), np.abs(ma - mb).tolist(),
                              ra, rb, ba, bb, sa, sb)
