"""Classification metrics, distillation fidelity and the production-settings evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import ConfigurationError, DegenerateDataError, ShapeError
from .numerics import pearson_corr
from .retrieval import RetrievalResult


@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def classification_metrics(scores, labels, threshold: float) -> ClassificationMetrics:
    """Precision, recall and F1 of ``score >= threshold`` against binary labels.

    A zero denominator yields 0 for that metric and sets ``degenerate``.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeError(f"length mismatch {s.size} vs {y.size}")
    if s.size < 1:
        raise ShapeError("need at least one score")
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ClassificationMetrics(precision, recall, f1, degenerate)


@dataclass(frozen=True)
class Threshold:
    value: float
    grid_step: float
    best_f1: float


def _f1_curve(s: np.ndarray, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # Counts of positives/negatives at or above each grid point via sorted scores.
    order = np.sort(s)
    pos = np.sort(s[y])
    n_pred = s.size - np.searchsorted(order, grid, side="left")
    tp = pos.size - np.searchsorted(pos, grid, side="left")
    fp = n_pred - tp
    fn = pos.size - tp
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def select_threshold(val_scores, val_labels, grid_step: float = 0.01) -> Threshold:
    """Grid search over [-1, 1] for the F1-maximising cut; ties go to the lowest cut."""
    s = np.asarray(val_scores, dtype=np.float64).ravel()
    y = np.asarray(val_labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeError(f"length mismatch {s.size} vs {y.size}")
    if y.all() or not y.any():
        raise DegenerateDataError("validation labels must contain both classes")
    n = int(round(2.0 / grid_step))
    grid = np.round(-1.0 + grid_step * np.arange(n + 1), 12)
    f1 = _f1_curve(s, y, grid)
    best = int(np.argmax(f1))
    return Threshold(float(grid[best]), grid_step, float(f1[best]))


def ce_corr(student_cosines, assistant_scores) -> float:
    """Pearson correlation between student cosines and assistant scores (0 when degenerate)."""
    r = pearson_corr(student_cosines, assistant_scores)
    return 0.0 if np.isnan(r) else r


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ConfigurationError("median of an empty sample", field="items")
    return float(v[(v.size - 1) // 2])


@dataclass
class EvalReport:
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    ce_corr: float = float("nan")
    median_kw_cnt: float = float("nan")
    judge_pass_rate: float = float("nan")
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ProductionTrace:
    counts: dict[int, int]
    survivors: list[tuple[int, int]]
    judged: list[tuple[int, int]]


def production_eval_from_results(results: list[RetrievalResult], filter_score: Callable,
                                 filter_threshold: float, other_recall_lists: Mapping[int, set],
                                 judge_fn: Callable[[int, int], int] | None = None,
                                 judge_sample_size: int = 10_000, seed: int = 0,
                                 ) -> tuple[EvalReport, ProductionTrace]:
    """Dedup-and-filter evaluation over precomputed top-k retrievals.

    For each item: keep retrieved keyphrases whose filter score clears the
    threshold, drop those any other recall source already offers, count the
    rest.  ``median_kw_cnt`` is the lower median of the counts; the judge
    labels a seeded sample of surviving pairs for ``judge_pass_rate``.

    ``filter_score(item_ids, kp_ids) -> scores`` is vectorised.
    """
    if not results:
        raise ConfigurationError("no items to evaluate", field="sample_size")
    items = np.repeat([r.item_id for r in results], [len(r.hits) for r in results])
    kps = np.array([k for r in results for k, _ in r.hits], dtype=np.int64)
    scores = np.asarray(filter_score(items, kps), dtype=np.float64) if kps.size else np.zeros(0)
    passed = scores >= filter_threshold
    counts, survivors, pos = {}, [], 0
    for r in results:
        other = other_recall_lists.get(r.item_id, set())
        n = 0
        for k, _ in r.hits:
            if passed[pos] and k not in other:
                n += 1
                survivors.append((r.item_id, k))
            pos += 1
        counts[r.item_id] = n
    per_item = [counts[r.item_id] for r in results]
    report = EvalReport(median_kw_cnt=lower_median(per_item))
    judged = []
    if judge_fn is not None:
        if survivors:
            rng = np.random.default_rng([seed, 5])
            take = min(judge_sample_size, len(survivors))
            picks = np.sort(rng.choice(len(survivors), size=take, replace=False))
            judged = [survivors[j] for j in picks]
            report.judge_pass_rate = float(np.mean([judge_fn(i, k) for i, k in judged]))
        else:
            report.judge_pass_rate = 0.0
    return report, ProductionTrace(counts, survivors, judged)


def load_recall_lists(path) -> dict[int, set[int]]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[int(d["item"])] = {int(k) for k in d["kps"]}
    return out


def write_recall_lists(path, lists: Mapping[int, set]) -> None:
    with open(path, "w") as fh:
        for item in sorted(lists):
            fh.write(json.dumps({"item": item, "kps": sorted(lists[item])}) + "\n")


_TABLE_COLUMNS = {
    "classification": ("Recall", "Precision", "F1"),
    "kd": ("C.E. corr", "Recall", "Precision", "F1"),
    "production": ("median kw cnt", "judge pass rate"),
}


def markdown_table(rows: list[tuple[str, EvalReport]], layout: str = "production") -> str:
    """Render reports as a markdown table in one of the three column layouts."""
    cols = _TABLE_COLUMNS[layout]
    lines = ["| Labels | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for name, rep in rows:
        if layout == "production":
            cells = [f"{rep.median_kw_cnt:.1f}", f"{100 * rep.judge_pass_rate:.2f}%"]
        else:
            cells = [f"{rep.recall:.2f}", f"{rep.precision:.2f}", f"{rep.f1:.2f}"]
            if layout == "kd":
                cells.insert(0, f"{rep.ce_corr:.2f}")
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
