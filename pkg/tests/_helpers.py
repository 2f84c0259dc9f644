"""Oracles shared by several test modules."""

import heapq

import numpy as np

from kpdistill.features import PairFeatures
from kpdistill.synthworld import LabeledPair


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def numeric_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        up = f(x)
        flat[j] = orig - eps
        down = f(x)
        flat[j] = orig
        gflat[j] = (up - down) / (2 * eps)
    return g


def max_rel_error(analytic, numeric, floor_ratio=1e-5):
    """Entrywise relative error, floored at ``floor_ratio`` times the peak magnitude."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    floor = max(floor_ratio * max(np.max(np.abs(a)), np.max(np.abs(n))), 1e-300)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def brute_force_topk(matrix, ids, query, k):
    """Full scan ranked by (descending score, ascending id) with a plain heap."""
    q = np.asarray(query, dtype=np.float64)[: matrix.shape[1]]
    q = q / np.linalg.norm(q)
    scored = zip((-(matrix @ q)).tolist(), (int(i) for i in ids))
    return [i for _, i in heapq.nsmallest(k, scored)]


# Lines collected by the acceptance suite and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def separable_toy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    words = [f"t{j}" for j in range(60)]
    cats, titles, kps, pairs = [], [], [], []
    for j in range(n):
        title = rng.choice(words, size=5, replace=False)
        if j % 2 == 0:
            kp = rng.choice(title, size=2, replace=False)
        else:
            kp = rng.choice([w for w in words if w not in title], size=2, replace=False)
        cats.append("c0")
        titles.append(" ".join(title))
        kps.append(" ".join(kp))
        pairs.append(LabeledPair(j, j, "LLM", float(j % 2 == 0)))
    return PairFeatures.from_texts(cats, titles, kps, 128), pairs
