import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpdistill.evaluation import (EvalReport, ce_corr, classification_metrics, load_recall_lists,
                                  lower_median, markdown_table, production_eval_from_results,
                                  select_threshold, write_recall_lists)
from kpdistill.exceptions import ConfigurationError, DegenerateDataError, ShapeError
from kpdistill.pipeline import default_other_recalls, heldout_pairs, pair_cosines, production_eval
from kpdistill.retrieval import RetrievalResult


def confusion_oracle(scores, labels, threshold):
    tp = fp = fn = 0
    for s, y in zip(scores, labels):
        if s >= threshold and y:
            tp += 1
        elif s >= threshold:
            fp += 1
        elif y:
            fn += 1
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


# ---------------------------------------------------------------- classification metrics


def test_perfect_separation():
    m = classification_metrics([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0], 0.5)
    assert tuple(m) == (1.0, 1.0, 1.0) and not m.degenerate


def test_predict_all_positive_on_balanced_set():
    p, r, f1 = classification_metrics([1.0] * 4, [1, 0, 1, 0], 0.5)
    assert (p, r) == (0.5, 1.0)
    assert f1 == pytest.approx(2 / 3, abs=1e-15)


def test_zero_denominators_flag_degenerate():
    m = classification_metrics([0.1, 0.2], [1, 0], 0.5)
    assert tuple(m) == (0.0, 0.0, 0.0) and m.degenerate
    assert classification_metrics([0.9], [0], 0.5).degenerate


def test_shape_errors():
    with pytest.raises(ShapeError):
        classification_metrics([0.1, 0.2], [1], 0.5)
    with pytest.raises(ShapeError):
        classification_metrics([], [], 0.5)


def test_agrees_with_confusion_count_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        s = np.round(rng.uniform(-1, 1, n), 2)
        y = rng.integers(0, 2, n)
        t = float(np.round(rng.uniform(-1, 1), 2))
        np.testing.assert_allclose(tuple(classification_metrics(s, y, t)),
                                   confusion_oracle(s, y, t), atol=1e-15)


@given(st.lists(st.tuples(st.floats(-1, 1), st.booleans()), min_size=1, max_size=50))
def test_f1_is_harmonic_mean(rows):
    s, y = zip(*rows)
    m = classification_metrics(s, y, 0.0)
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    assert 0.0 <= m.f1 <= 1.0


# ---------------------------------------------------------------- threshold selection


def test_label_scores_pick_lowest_perfect_cut():
    y = [1, 0, 1, 1, 0, 0]
    t = select_threshold(np.array(y, dtype=float), y)
    assert t.value == 0.01 and t.best_f1 == 1.0


def exhaustive_best(s, y, step):
    grid = np.round(np.arange(-1.0, 1.0 + step / 2, step), 12)
    f1s = [confusion_oracle(s, y, g)[2] for g in grid]
    best = int(np.argmax(f1s))
    return grid[best], f1s


def test_flipped_scores_still_return_the_grid_argmax():
    rng = np.random.default_rng(2)
    y = np.array([1] * 25 + [0] * 75)
    s = np.where(y == 1, -0.5, 0.5) + rng.uniform(-0.3, 0.3, y.size)
    t = select_threshold(s, y)
    best, f1s = exhaustive_best(s, y, 0.01)
    assert max(f1s) <= 0.5
    assert t.value == pytest.approx(best) and t.best_f1 == pytest.approx(max(f1s))


@pytest.mark.parametrize("seed", range(10))
def test_selection_matches_exhaustive_grid(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 200)
    y[:2] = [0, 1]
    s = np.clip(0.4 * y + rng.normal(0, 0.3, 200), -1, 1)
    t = select_threshold(s, y, 0.05)
    best, f1s = exhaustive_best(s, y, 0.05)
    assert t.value == pytest.approx(best) and t.best_f1 == pytest.approx(max(f1s))
    assert -1.0 <= t.value <= 1.0


def test_single_class_validation_is_degenerate():
    with pytest.raises(DegenerateDataError):
        select_threshold([0.1, 0.5], [1, 1])


def test_grid_refinement_barely_moves_f1(chain):
    student = chain.student(seed=0)
    vi, vk, vy = heldout_pairs(chain.world, chain.data.val_items)
    cos = pair_cosines(student, chain.features, vi, vk)
    coarse, fine = select_threshold(cos, vy, 0.01), select_threshold(cos, vy, 0.001)
    assert fine.best_f1 >= coarse.best_f1
    assert fine.best_f1 - coarse.best_f1 < 0.005


# ---------------------------------------------------------------- correlation and median


def test_ce_corr_extremes():
    a = np.random.default_rng(3).uniform(size=50)
    assert ce_corr(a, a) == 1.0
    assert ce_corr(a, 1 - a) == -1.0
    assert ce_corr(np.ones(5), a[:5]) == 0.0


def test_lower_median():
    assert lower_median([4, 1, 3, 2]) == 2.0
    assert lower_median([5, 1, 3]) == 3.0
    with pytest.raises(ConfigurationError):
        lower_median([])


# ---------------------------------------------------------------- production evaluation


def fixed_filter(table):
    return lambda items, kps: np.array([table[(int(i), int(k))] for i, k in zip(items, kps)])


def test_hand_traced_fixture():
    results = [RetrievalResult(0, ((10, 0.9), (11, 0.8), (12, 0.7)))]
    filt = fixed_filter({(0, 10): 0.9, (0, 11): 0.6, (0, 12): 0.2})
    report, trace = production_eval_from_results(results, filt, 0.5, {0: {11}})
    assert report.median_kw_cnt == 1.0
    assert trace.counts == {0: 1} and trace.survivors == [(0, 10)]


def test_full_dedup_gives_zero():
    results = [RetrievalResult(i, ((1, 0.9), (2, 0.5))) for i in range(3)]
    report, _ = production_eval_from_results(results, lambda i, k: np.ones(len(k)), 0.5,
                                             {i: {1, 2} for i in range(3)})
    assert report.median_kw_cnt == 0.0


def test_empty_item_sample_is_an_error():
    with pytest.raises(ConfigurationError):
        production_eval_from_results([], lambda i, k: np.ones(len(k)), 0.5, {})


@pytest.fixture(scope="module")
def random_results():
    rng = np.random.default_rng(5)
    k = 10
    results = [RetrievalResult(i, tuple((int(kp), 0.0) for kp in rng.choice(100, k, replace=False)))
               for i in range(31)]
    table = {(r.item_id, kp): float(rng.uniform()) for r in results for kp in r.ids}
    others = {i: set(rng.choice(100, 8, replace=False).tolist()) for i in range(0, 31, 2)}
    return results, fixed_filter(table), others, k


def test_weaker_filter_never_lowers_the_median(random_results):
    results, filt, others, k = random_results
    medians = [production_eval_from_results(results, filt, t, others)[0].median_kw_cnt
               for t in (0.9, 0.7, 0.5, 0.3, 0.1)]
    assert medians == sorted(medians)
    assert all(0 <= m <= k for m in medians)


def test_judge_sample_is_seeded_and_capped(random_results):
    results, filt, others, _ = random_results
    judge_fn = lambda i, k: int((i + k) % 3 == 0)
    a, ta = production_eval_from_results(results, filt, 0.3, others, judge_fn, judge_sample_size=20, seed=4)
    b, tb = production_eval_from_results(results, filt, 0.3, others, judge_fn, judge_sample_size=20, seed=4)
    assert ta.judged == tb.judged and len(ta.judged) == 20
    assert set(ta.judged) <= set(ta.survivors)
    assert a.judge_pass_rate == np.mean([judge_fn(i, k) for i, k in ta.judged])


def test_production_eval_on_default_world(chain):
    params, _ = chain.assistant(0)
    items = chain.data.test_items
    others = default_other_recalls(chain.world, items)
    rep = production_eval(chain.world, chain.student(seed=0), params, chain.features, items, others,
                          k=20, judge_sample_size=500)
    assert 0 <= rep.median_kw_cnt <= 20
    assert 0.0 <= rep.judge_pass_rate <= 1.0
    assert rep.config["k"] == 20 and rep.config["n_items"] == len(items)


# ---------------------------------------------------------------- io and tables


def test_recall_lists_round_trip(tmp_path):
    lists = {3: {5, 1}, 0: set()}
    write_recall_lists(tmp_path / "o.jsonl", lists)
    assert (tmp_path / "o.jsonl").read_text().splitlines()[1] == '{"item": 3, "kps": [1, 5]}'
    assert load_recall_lists(tmp_path / "o.jsonl") == lists


def test_report_json_uses_null_for_missing_metrics():
    d = json.loads(EvalReport(median_kw_cnt=12.0, config={"k": 20}).to_json())
    assert d["median_kw_cnt"] == 12.0 and d["f1"] is None and d["config"] == {"k": 20}


def test_markdown_layouts():
    rep = EvalReport(0.92, 0.78, 0.85, 0.79, 12.0, 0.7057)
    prod = markdown_table([("LLM+CTR+KD", rep)]).splitlines()
    assert prod[0] == "| Labels | median kw cnt | judge pass rate |"
    assert prod[2] == "| LLM+CTR+KD | 12.0 | 70.57% |"
    cls = markdown_table([("CTR", rep)], "classification").splitlines()
    assert cls[0] == "| Labels | Recall | Precision | F1 |" and cls[2] == "| CTR | 0.78 | 0.92 | 0.85 |"
    kd = markdown_table([("pearson", rep)], "kd").splitlines()
    assert kd[2] == "| pearson | 0.79 | 0.78 | 0.92 | 0.85 |"
    assert kd[1] == "|---|---|---|---|---|"
