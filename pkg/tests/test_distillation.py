import json

import numpy as np
import pytest

from kpdistill.distillation import (cross_scores, kd_score, score_distribution_report,
                                    teacher_soft_scores)
from kpdistill.encoders import CrossEncoderParams
from kpdistill.evaluation import select_threshold
from kpdistill.exceptions import EmptyInputError, UntrainedModelError
from kpdistill.pipeline import heldout_pairs, pair_cosines
from kpdistill.synthworld import LabeledPair, judge, read_pairs, sample_pairs, write_pairs
from kpdistill.trainer import TrainConfig, train_cross

from _helpers import separable_toy


@pytest.fixture(scope="module")
def toy():
    feats, pairs = separable_toy(300, seed=5)
    cfg = TrainConfig(batch_size=16, epochs=30, seed=0, matryoshka=None, learning_rate=1e-2)
    params, hist = train_cross(CrossEncoderParams.init(128, 8, seed=0), pairs, feats, cfg)
    return feats, pairs, params, hist


# ---------------------------------------------------------------- kd_score


def test_duplicate_pairs_collapse_to_first_occurrence(toy):
    feats, _, params, hist = toy
    out = kd_score(params, [(3, 3), (1, 1), (3, 3), (2, 2)], feats, history=hist)
    assert [(p.item_id, p.keyphrase_id) for p in out] == [(3, 3), (1, 1), (2, 2)]
    assert all(p.source == "KD" for p in out)


def test_scores_are_bounded_over_many_pairs(chain):
    params, hist = chain.assistant(0)
    pairs = sample_pairs(chain.world, np.arange(200), 10_000, seed=8)
    values = np.array([p.value for p in kd_score(params, pairs, chain.features, history=hist)])
    assert values.size == 10_000
    assert values.min() >= 0.0 and values.max() <= 1.0


def test_relevant_pairs_score_higher_on_separable_toy(toy):
    feats, pairs, params, hist = toy
    out = kd_score(params, pairs, feats, history=hist)
    rel = np.array([p.value for p in pairs]) == 1.0
    scores = np.array([p.value for p in out])
    assert scores[rel].mean() - scores[~rel].mean() >= 0.2


def test_untrained_assistant_is_refused_unless_overridden(toy):
    feats, pairs, _, _ = toy
    fresh = CrossEncoderParams.init(128, 8, seed=1)
    with pytest.raises(UntrainedModelError, match="allow_untrained"):
        kd_score(fresh, pairs, feats)
    assert len(kd_score(fresh, pairs, feats, allow_untrained=True)) == len(pairs)


def test_rescoring_is_identical(toy):
    feats, pairs, params, hist = toy
    assert kd_score(params, pairs, feats, history=hist) == kd_score(params, pairs, feats, history=hist)


def test_kd_scores_match_direct_cross_scores(toy):
    feats, pairs, params, hist = toy
    out = kd_score(params, pairs[:20], feats, history=hist)
    ids = np.arange(20)
    np.testing.assert_array_equal([p.value for p in out], cross_scores(params, feats, ids, ids))


def test_kd_labels_round_trip_through_the_pair_format(tmp_path, toy):
    feats, pairs, params, hist = toy
    out = kd_score(params, pairs[:10], feats, history=hist)
    write_pairs(tmp_path / "kd.jsonl", out)
    assert read_pairs(tmp_path / "kd.jsonl") == out


# ---------------------------------------------------------------- distribution report


def test_identical_inputs_have_zero_difference():
    s = np.random.default_rng(0).uniform(size=500)
    rep = score_distribution_report(s, s)
    assert rep.abs_diff == [0.0] * 20
    assert rep.mass_a == rep.mass_b


def test_extreme_mass_of_peaked_vs_uniform_scores():
    peaked = np.full(1000, 0.99)
    uniform = (np.arange(1000) + 0.5) / 1000
    rep = score_distribution_report(peaked, uniform)
    assert rep.extreme_ratio_a == pytest.approx(1.0)
    assert rep.extreme_ratio_b == pytest.approx(2 / 20)
    assert rep.shape_a == "peaked" and rep.shape_b == "even"


@pytest.mark.parametrize("seed", range(5))
def test_masses_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    rep = score_distribution_report(rng.beta(0.3, 0.3, 77), rng.uniform(-0.2, 1.2, 13), n_bins=7)
    assert len(rep.edges) == 8
    assert abs(sum(rep.mass_a) - 1) < 1e-9 and abs(sum(rep.mass_b) - 1) < 1e-9


def test_empty_input_is_rejected():
    with pytest.raises(EmptyInputError):
        score_distribution_report([], [0.5])


def test_report_json():
    d = json.loads(score_distribution_report([0.1], [0.9], n_bins=2).to_json())
    assert d["mass_a"] == [1.0, 0.0] and d["mass_b"] == [0.0, 1.0]


def test_assistant_scores_are_more_even_than_teacher_logits(chain):
    params, _ = chain.assistant(0)
    pairs = sample_pairs(chain.world, chain.data.test_items, 3000, seed=4)
    items, kps = map(np.array, zip(*pairs))
    rep = score_distribution_report(teacher_soft_scores(chain.world, pairs),
                                    cross_scores(params, chain.features, items, kps))
    assert rep.extreme_balance_b > rep.extreme_balance_a


# ---------------------------------------------------------------- chain ordering


def test_judge_assistant_student_accuracy_ordering(chain):
    world, feats, data = chain.world, chain.features, chain.data
    ti, tk, ty = heldout_pairs(world, data.test_items)
    params, _ = chain.assistant(0)
    student = chain.student(seed=0)

    judge_acc = np.mean([judge(world, i, k, 0.05) == y for i, k, y in zip(ti, tk, ty)])
    assistant_acc = np.mean((cross_scores(params, feats, ti, tk) >= 0.5) == ty)
    vi, vk, vy = heldout_pairs(world, data.val_items)
    cut = select_threshold(pair_cosines(student, feats, vi, vk), vy).value
    student_acc = np.mean((pair_cosines(student, feats, ti, tk) >= cut) == ty)

    slack = 0.02
    assert judge_acc >= assistant_acc - slack
    assert assistant_acc >= student_acc - slack
    assert student_acc > (1 - ty.mean()) + 0.05   # clearly better than predicting all-negative


def test_labeled_pair_type_of_kd_output(toy):
    feats, pairs, params, hist = toy
    assert all(isinstance(p, LabeledPair) for p in kd_score(params, pairs[:5], feats, history=hist))
