"""End-to-end experiment plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .distillation import cross_scores, kd_score
from .encoders import BiEncoderParams, CrossEncoderParams, bi_forward
from .evaluation import (ClassificationMetrics, EvalReport, ce_corr, classification_metrics,
                         production_eval_from_results, select_threshold)
from .features import WorldFeatures
from .retrieval import index_student, retrieve_for_items
from .synthworld import (LabeledPair, LogConfig, SyntheticWorld, all_pairs, judge, judge_labels,
                         sample_pairs, simulate_search_logs, split_items, sr_labels)
from .trainer import TrainConfig, TrainHistory, train_bi, train_cross


@dataclass
class DataConfig:
    n_llm_pairs: int = 6000
    n_sr_pairs: int = 4000
    n_assistant_pairs: int = 16000
    sr_label_threshold: float = 0.5
    noise_rate: float = 0.05
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    logs: LogConfig = field(default_factory=LogConfig)


@dataclass
class Datasets:
    train_items: np.ndarray
    val_items: np.ndarray
    test_items: np.ndarray
    labels: dict[str, list[LabeledPair]]
    assistant_labels: list[LabeledPair] = field(default_factory=list)

    def pairs_for_kd(self) -> list[LabeledPair]:
        """Every student training pair from the raw label sources, first occurrence first."""
        return [p for s in ("CTR", "SR", "LLM") for p in self.labels.get(s, [])]


def build_datasets(world: SyntheticWorld, cfg: DataConfig | None = None) -> Datasets:
    """Split items and curate the CTR, SR and judge label sets on the training items.

    The assistant gets its own, larger judge-labelled sample.
    """
    cfg = cfg or DataConfig()
    train, val, test = split_items(world, cfg.split)
    _, ctr = simulate_search_logs(world, cfg.logs)
    train_set = set(train.tolist())
    ctr = [p for p in ctr if p.item_id in train_set]
    sr = sr_labels(world, sample_pairs(world, train, cfg.n_sr_pairs, seed=world.seed * 7 + 1),
                   cfg.sr_label_threshold)
    llm = judge_labels(world, sample_pairs(world, train, cfg.n_llm_pairs, seed=world.seed * 7 + 2),
                       cfg.noise_rate)
    assistant = judge_labels(
        world, sample_pairs(world, train, cfg.n_assistant_pairs, seed=world.seed * 7 + 3), cfg.noise_rate)
    return Datasets(train, val, test, {"CTR": ctr, "SR": sr, "LLM": llm}, assistant)


@dataclass
class EncoderConfig:
    vocab_size: int = 4096
    hidden: int = 32
    dim: int = 256


DEFAULT_CROSS_TRAIN = TrainConfig(epochs=6, batch_size=32, learning_rate=3e-3, matryoshka=None)
DEFAULT_BI_TRAIN = TrainConfig(epochs=6, batch_size=32, learning_rate=1e-3)


def train_assistant(features: WorldFeatures, data: Datasets, enc: EncoderConfig | None = None,
                    cfg: TrainConfig | None = None, seed: int = 0
                    ) -> tuple[CrossEncoderParams, TrainHistory]:
    enc = enc or EncoderConfig()
    cfg = dataclasses.replace(cfg or DEFAULT_CROSS_TRAIN, seed=seed)
    params = CrossEncoderParams.init(enc.vocab_size, enc.hidden, seed=seed)
    return train_cross(params, data.assistant_labels or data.labels["LLM"], features, cfg)


def add_kd_labels(data: Datasets, assistant: CrossEncoderParams, history: TrainHistory,
                  features: WorldFeatures) -> Datasets:
    kd = kd_score(assistant, data.pairs_for_kd(), features, history=history)
    return dataclasses.replace(data, labels={**data.labels, "KD": kd})


def train_student(features: WorldFeatures, data: Datasets, sources, enc: EncoderConfig | None = None,
                  cfg: TrainConfig | None = None, seed: int = 0) -> tuple[BiEncoderParams, TrainHistory]:
    enc = enc or EncoderConfig()
    cfg = dataclasses.replace(cfg or DEFAULT_BI_TRAIN, seed=seed, sources=tuple(sources))
    if cfg.matryoshka is not None and cfg.matryoshka.dims[-1] > enc.dim:
        raise L.ConfigurationError("matryoshka dim exceeds encoder dim", field="dims")
    params = BiEncoderParams.init(enc.vocab_size, enc.hidden, enc.dim, seed=seed,
                                  min_prefix=cfg.matryoshka.dims[0] if cfg.matryoshka else 1)
    return train_bi(params, data.labels, features, cfg)


def pair_cosines(params: BiEncoderParams, features: WorldFeatures, item_ids, kp_ids) -> np.ndarray:
    u, _ = bi_forward(params, features.items[np.asarray(item_ids)])
    v, _ = bi_forward(params, features.keyphrases[np.asarray(kp_ids)])
    return np.sum(u * v, axis=1)


def heldout_pairs(world: SyntheticWorld, items) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pairs = np.array(all_pairs(world, items), dtype=np.int64).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1], world.relevance[pairs[:, 0], pairs[:, 1]]


def classification_eval(params: BiEncoderParams, features: WorldFeatures, data: Datasets,
                        grid_step: float = 0.01) -> tuple[ClassificationMetrics, float]:
    """F1 against ground truth on test items, with the cut chosen on validation items."""
    world = features.world
    vi, vk, vy = heldout_pairs(world, data.val_items)
    thr = select_threshold(pair_cosines(params, features, vi, vk), vy, grid_step)
    ti, tk, ty = heldout_pairs(world, data.test_items)
    return classification_metrics(pair_cosines(params, features, ti, tk), ty, thr.value), thr.value


def distillation_fidelity(params: BiEncoderParams, assistant: CrossEncoderParams,
                          features: WorldFeatures, data: Datasets) -> float:
    ti, tk, _ = heldout_pairs(features.world, data.test_items)
    return ce_corr(pair_cosines(params, features, ti, tk), cross_scores(assistant, features, ti, tk))


def default_other_recalls(world: SyntheticWorld, items, per_item: int = 5) -> dict[int, set[int]]:
    """Stand-in for other recall systems: each item's top keyphrases by search relevance."""
    out = {}
    for i in items:
        row = world.sr_score[int(i)]
        top = np.lexsort((np.arange(row.size), -row))[:per_item]
        out[int(i)] = {int(k) for k in top}
    return out


def production_eval(world: SyntheticWorld, student: BiEncoderParams, assistant: CrossEncoderParams,
                    features: WorldFeatures, items, other_recall_lists, filter_threshold: float = 0.5,
                    k: int = 20, dim_prefix: int | None = None, judge_sample_size: int = 10_000,
                    noise_rate: float = 0.05, seed: int = 0) -> EvalReport:
    """Retrieve top-k per item, filter by the assistant, dedup against other recalls, judge a sample."""
    if len(items) == 0:
        raise L.ConfigurationError("empty item sample", field="sample_size")
    index = index_student(student, features, dim_prefix)
    results = retrieve_for_items(student, items, index, features, k)
    report, _ = production_eval_from_results(
        results, lambda i, kp: cross_scores(assistant, features, i, kp), filter_threshold,
        other_recall_lists, lambda i, kp: judge(world, i, kp, noise_rate), judge_sample_size, seed)
    report.config = {"k": k, "filter_threshold": filter_threshold, "dim_prefix": index.dim_prefix,
                     "seed": seed, "n_items": len(items), "judge_sample_size": judge_sample_size}
    return report
