"""End-to-end acceptance criteria.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in the
terminal summary) and then asserts the same condition.
"""

import contextlib
import io
import time

import numpy as np
import pytest
import yaml

from kpdistill import losses as L
from kpdistill.cli import main
from kpdistill.encoders import BiEncoderParams, CrossBags, CrossEncoderParams, bag_matrix
from kpdistill.evaluation import production_eval_from_results
from kpdistill.numerics import CrossBatch, PairBatch, finite_diff_check
from kpdistill.pipeline import classification_eval, default_other_recalls, distillation_fidelity
from kpdistill.distillation import cross_scores
from kpdistill.retrieval import RetrievalResult, build_index, index_student, knn_batch, retrieve_for_items
from kpdistill.synthworld import LogConfig, simulate_search_logs
from kpdistill.trainer import make_schedule

from _helpers import brute_force_topk, max_rel_error, numeric_grad, report_criterion, unit_rows

pytestmark = pytest.mark.slow

LOSSES = ("mnr", "contrastive", "pearson", "cosent", "mse")


# ---------------------------------------------------------------- 1. gradients


def _loss_level_errors(rng):
    errors = {}
    t = rng.random(12)
    scalar = {
        "pearson": (lambda x: L.pearson_ri_loss(t, x), rng.uniform(-1, 1, 12)),
        "cosent": (lambda x: L.cosent_loss(t, x), rng.uniform(-1, 1, 12)),
        "mse": (lambda x: L.mse_loss(t, x), rng.uniform(-1, 1, 12)),
    }
    for name, (fn, x) in scalar.items():
        errors[name] = max_rel_error(fn(x).grads[0], numeric_grad(lambda z: fn(z).value, x))
    A, P = unit_rows(rng, 8, 6), unit_rows(rng, 8, 6)
    y = np.array([1, 0, 1, 1, 0, 0, 1, 0.0])
    pairwise = {
        "mnr": lambda a, p: L.mnr_loss(a, p),
        "contrastive": lambda a, p: L.contrastive_loss(a, p, y),
    }
    for name, fn in pairwise.items():
        errors[name] = max(
            max_rel_error(fn(A, P).grads[0], numeric_grad(lambda z: fn(z, P).value, A)),
            max_rel_error(fn(A, P).grads[1], numeric_grad(lambda z: fn(A, z).value, P)))
    U, V = unit_rows(rng, 6, 12), unit_rows(rng, 6, 12)
    mcfg = L.MatryoshkaConfig((4, 8, 12))
    for name in LOSSES:
        tgt = {"mnr": None, "contrastive": y[:6]}.get(name, rng.random(6))
        out = L.matryoshka_wrap(name, U, V, tgt, mcfg)
        num = numeric_grad(lambda z: L.matryoshka_wrap(name, z, V, tgt, mcfg).value, U)
        errors[f"matryoshka/{name}"] = max_rel_error(out.grads[0], num)
    return errors


def _model_level_errors(rng):
    vocab, hidden, dim = 64, 8, 8

    def bags(n, lo=1, hi=5):
        return bag_matrix([rng.integers(1, vocab, size=rng.integers(lo, hi + 1)) for _ in range(n)], vocab)

    params = BiEncoderParams.init(vocab, hidden, dim, seed=3, min_prefix=4)
    errors = {}
    for name in LOSSES:
        targets = np.arange(6) % 2.0 if name == "contrastive" else rng.random(6)
        batch = PairBatch(bags(6), bags(6), targets, "T")
        errors[f"bi/{name}"] = finite_diff_check(params, batch, name).max_relative_error
        errors[f"bi+matryoshka/{name}"] = finite_diff_check(
            params, batch, name, matryoshka=L.MatryoshkaConfig((4, 8))).max_relative_error
    cross = CrossEncoderParams.init(vocab, hidden, seed=4)
    cbatch = CrossBatch(CrossBags(bags(6), bags(6, 1, 1), bags(6, 2, 6)), np.arange(6) % 2.0)
    errors["cross/bce"] = finite_diff_check(cross, cbatch).max_relative_error
    return errors


def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = {**_loss_level_errors(rng), **_model_level_errors(rng)}
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 60
    report_criterion(1, ok, f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.2e}, {elapsed:.1f}s")
    assert ok, errors


# ---------------------------------------------------------------- 2. loss identities


def test_criterion_02_loss_identities():
    rng = np.random.default_rng(0)
    x = rng.random(9)
    u = np.tile([[1.0, 0.0]], (4, 1))
    checks = {
        "mnr uniform K=4": abs(L.mnr_loss(u, u).value - np.log(4)) < 1e-9,
        "pearson identical": L.pearson_ri_loss(x, x).value == 0.0,
        "pearson reversed": L.pearson_ri_loss(x, -x).value == 2.0,
        "cosent no pairs": L.cosent_loss([0.5, 0.5, 0.5], [0.9, 0.1, -0.3]).value == 0.0,
        "mse identical": L.mse_loss(x, x).value == 0.0,
        "contrastive inactive": L.contrastive_loss([[1.0, 0.0]], [[-1.0, 0.0]], [0],
                                                   L.ContrastiveConfig(0.5)).value == 0.0,
    }
    failed = [k for k, v in checks.items() if not v]
    report_criterion(2, not failed, "all identities exact" if not failed else f"failed: {failed}")
    assert not failed


# ---------------------------------------------------------------- 3. KD loss ordering


def test_criterion_03_kd_loss_ordering(chain):
    start = time.perf_counter()
    corr = {name: [] for name in ("pearson", "cosent", "mse")}
    for seed in range(5):
        assistant, _ = chain.assistant(seed)
        data = chain.kd_data(seed)
        for name in corr:
            student = chain.student(("KD",), seed=seed, task_map={"KD": name})
            corr[name].append(distillation_fidelity(student, assistant, chain.features, data))
    p, c, m = (np.array(corr[k]) for k in ("pearson", "cosent", "mse"))
    ordered = int(np.sum((p >= c) & (c >= m)))
    ok = p.mean() >= c.mean() >= m.mean() and p.mean() - m.mean() >= 0.03 and ordered >= 4
    detail = (f"mean C.E. corr pearson {p.mean():.3f} cosent {c.mean():.3f} mse {m.mean():.3f}; "
              f"ordered in {ordered}/5 seeds ({time.perf_counter() - start:.0f}s)")
    report_criterion(3, ok, detail)
    assert ok, corr


# ---------------------------------------------------------------- 4. multi-task gain


def test_criterion_04_multi_task_gain(chain):
    gains = []
    for seed in range(3):
        data = chain.kd_data(seed)
        base, _ = classification_eval(chain.student(("CTR",), seed=seed), chain.features, data)
        full, _ = classification_eval(chain.student(("LLM", "CTR", "KD"), seed=seed), chain.features, data)
        gains.append(full.f1 - base.f1)
    gain = 100 * float(np.mean(gains))
    ok = gain >= 5.0
    report_criterion(4, ok, f"LLM+CTR+KD minus CTR: {gain:+.1f} F1 points (3 seeds)")
    assert ok, gains


# ---------------------------------------------------------------- 5. retrieval oracle


def test_criterion_05_retrieval_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(55)
    corpus = unit_rows(rng, 10_000, 32)
    ids = rng.permutation(50_000)[:10_000]
    index = build_index(corpus, ids=ids)
    queries = rng.normal(size=(1000, 32))
    got = knn_batch(index, queries, 10)
    mismatches = sum([i for i, _ in hits] != brute_force_topk(corpus, ids, q, 10)
                     for q, hits in zip(queries, got))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30
    report_criterion(5, ok, f"{mismatches} mismatching id lists over 1000 queries x 10^4 vectors, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 6. Matryoshka fidelity


def test_criterion_06_matryoshka_fidelity(chain):
    student = chain.student(("LLM", "CTR", "KD"), seed=0)
    items = np.arange(len(chain.world.items))
    full = retrieve_for_items(student, items, index_student(student, chain.features), chain.features, 20)
    short = retrieve_for_items(student, items, index_student(student, chain.features, 64), chain.features, 20)
    jac = np.mean([len(set(a.ids) & set(b.ids)) / len(set(a.ids) | set(b.ids)) for a, b in zip(full, short)])
    ok = jac >= 0.8
    report_criterion(6, ok, f"mean top-20 Jaccard, prefix 64 vs 256: {jac:.3f}")
    assert ok


# ---------------------------------------------------------------- 7. production evaluation


def test_criterion_07_production_fixture_and_monotonicity(chain):
    fixture = [RetrievalResult(0, ((10, 0.9), (11, 0.8), (12, 0.7)))]
    scores = {10: 0.9, 11: 0.6, 12: 0.2}
    rep, _ = production_eval_from_results(
        fixture, lambda i, k: np.array([scores[int(x)] for x in k]), 0.5, {0: {11}})
    fixture_ok = rep.median_kw_cnt == 1.0

    assistant, _ = chain.assistant(0)
    student = chain.student(("LLM", "CTR", "KD"), seed=0)
    items = chain.data.test_items
    results = retrieve_for_items(student, items, index_student(student, chain.features), chain.features, 20)
    filt = lambda i, k: cross_scores(assistant, chain.features, i, k)
    other = default_other_recalls(chain.world, items)
    sweep = [production_eval_from_results(results, filt, t, other)[0].median_kw_cnt
             for t in (0.9, 0.7, 0.5, 0.3, 0.1)]
    monotone = all(a <= b for a, b in zip(sweep, sweep[1:]))
    ok = fixture_ok and monotone
    report_criterion(7, ok, f"fixture median {rep.median_kw_cnt}; sweep 0.9..0.1 medians {sweep}")
    assert ok


# ---------------------------------------------------------------- 8. bias construction


def test_criterion_08_bias_construction(chain):
    world, cfg = chain.world, LogConfig()
    logs, positives = simulate_search_logs(world, cfg)
    below = sum(world.sr_score[p.item_id, p.keyphrase_id] < cfg.sr_filter_threshold for p in positives)
    clicked = {(g.item_id, g.keyphrase_id) for g in logs if g.clicks > 0}
    unclicked_relevant = sum((int(i), int(k)) not in clicked for i, k in np.argwhere(world.relevance))
    ok = below == 0 and unclicked_relevant >= 1 and len(positives) > 0
    report_criterion(8, ok, f"{len(positives)} CTR pairs, {below} below filter, "
                            f"{unclicked_relevant} relevant-but-unclicked pairs")
    assert ok


# ---------------------------------------------------------------- 9. scheduler


def test_criterion_09_scheduler_proportionality():
    n, p = 100, 0.8
    sigma = np.sqrt(n * p * (1 - p))
    counts = []
    for seed in range(20):
        sched = make_schedule({"A": 8000, "B": 2000}, 100, 1, seed)
        counts.append(sum(src == "A" for src, _ in sched))
    ok = all(abs(c - n * p) <= 3 * sigma for c in counts)
    report_criterion(9, ok, f"source-A batch counts {min(counts)}..{max(counts)} vs 80 +/- {3 * sigma:.0f}")
    assert ok


# ---------------------------------------------------------------- 10. determinism


def test_criterion_10_ablate_determinism(tmp_path):
    config = {
        "seed": 5,
        "data": {"n_llm_pairs": 1500, "n_sr_pairs": 1000, "n_assistant_pairs": 3000},
        "trainer": {"cross": {"epochs": 2}, "bi": {"epochs": 2}},
        "ablation": {"combos": [["CTR"], ["LLM", "CTR", "KD"]]},
        "evaluation": {"judge_sample_size": 500},
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        for stage in ("gen", "train-cross", "kd-score", "ablate"):
            with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
                assert main(["--config", str(cfg_path), "--out", str(out), stage]) == 0, stage
        reports.append((out / "ablation/report.json").read_bytes())
    ok = reports[0] == reports[1]
    report_criterion(10, ok, f"two ablate runs, report.json {len(reports[0])} bytes, "
                             f"{'byte-identical' if ok else 'different'}")
    assert ok
