"""Multi-task training with single-source batches.

Each batch slot draws a label source with probability proportional to its
dataset size; within a source, rows are consumed from a stream of seeded
permutations, so one pass of that stream is one epoch of the source.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import losses as L
from .encoders import BiEncoderParams, CrossEncoderParams, save_params
from .exceptions import ConfigurationError, DegenerateDataError
from .features import PairFeatures
from .numerics import backprop, init_optimizer, optimizer_step
from .synthworld import LabeledPair

log = logging.getLogger(__name__)

DEFAULT_TASK_MAP = {"CTR": "mnr", "SR": "contrastive", "LLM": "contrastive", "KD": "pearson"}

# Table 2 label combinations.
ABLATION_COMBOS = (
    ("LLM", "CTR", "KD"), ("LLM", "SR", "KD"), ("LLM", "KD"), ("LLM",),
    ("LLM", "SR", "CTR", "KD"), ("KD",), ("SR", "KD"), ("CTR",),
)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    task_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TASK_MAP))
    loss_configs: dict[str, object] = field(default_factory=dict)
    matryoshka: L.MatryoshkaConfig | None = field(default_factory=L.MatryoshkaConfig)
    matryoshka_tasks: dict[str, bool] | None = None
    task_weights: dict[str, float] | None = None
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    sources: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError("must be >= 2", field="batch_size")
        if self.epochs < 0:
            raise ConfigurationError("must be >= 0", field="epochs")
        for src, loss_id in self.task_map.items():
            if loss_id not in L.LOSS_IDS:
                raise ConfigurationError(f"unknown loss {loss_id!r} for {src}", field="task_map")

    def loss_config(self, loss_id: str):
        cfg = self.loss_configs.get(loss_id)
        if cfg is None or isinstance(cfg, dict):
            return L.make_config(loss_id, cfg)
        return cfg

    def matryoshka_for(self, source: str) -> L.MatryoshkaConfig | None:
        if self.matryoshka is None:
            return None
        if self.matryoshka_tasks is not None and not self.matryoshka_tasks.get(source, True):
            return None
        return self.matryoshka

    def weight_for(self, source: str) -> float:
        return 1.0 if self.task_weights is None else float(self.task_weights.get(source, 1.0))


@dataclass
class StepRecord:
    step: int
    source: str
    loss: float


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def mean_loss(self, source: str | None = None, epoch: int | None = None,
                  steps_per_epoch: int | None = None) -> float:
        recs = self.steps
        if epoch is not None:
            recs = recs[epoch * steps_per_epoch:(epoch + 1) * steps_per_epoch]
        vals = [r.loss for r in recs if source is None or r.source == source]
        return float(np.mean(vals)) if vals else float("nan")

    def to_jsonl(self) -> str:
        lines = [json.dumps({"step": r.step, "source": r.source, "loss": r.loss}) for r in self.steps]
        lines += [json.dumps({"epoch_snapshot": e}, sort_keys=True) for e in self.epochs]
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                if "epoch_snapshot" in d:
                    hist.epochs.append(d["epoch_snapshot"])
                else:
                    hist.steps.append(StepRecord(int(d["step"]), d["source"], float(d["loss"])))
        return hist


# --------------------------------------------------------------------------- scheduling


def _source_code(source: str) -> int:
    return zlib.crc32(source.encode())


def _batches_per_pass(n: int, batch_size: int) -> int:
    full, rest = divmod(n, batch_size)
    return full + (1 if rest >= 2 else 0)


def source_stream(n: int, batch_size: int, seed: int, source: str) -> Iterator[np.ndarray]:
    """Endless batches over ``range(n)``: successive seeded permutations cut into chunks.

    A trailing chunk shorter than 2 rows is dropped.
    """
    rng = np.random.default_rng([seed, _source_code(source)])
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            chunk = perm[start:start + batch_size]
            if chunk.size >= 2:
                yield chunk


def make_schedule(dataset_sizes: dict[str, int], batch_size: int, epochs: int,
                  seed: int) -> list[tuple[str, np.ndarray]]:
    """Ordered ``(source, row indices)`` batches, each drawn from one source only."""
    sizes = {s: int(n) for s, n in dataset_sizes.items() if int(n) >= 2}
    if not sizes:
        raise ConfigurationError("no non-empty dataset to schedule", field="datasets")
    if batch_size < 2:
        raise ConfigurationError("must be >= 2", field="batch_size")
    names = list(sizes)
    counts = np.array([sizes[s] for s in names], dtype=np.float64)
    n_slots = epochs * sum(_batches_per_pass(sizes[s], batch_size) for s in names)
    draws = np.random.default_rng([seed, 0]).choice(len(names), size=n_slots, p=counts / counts.sum())
    streams = {s: source_stream(sizes[s], batch_size, seed, s) for s in names}
    return [(names[d], next(streams[names[d]])) for d in draws]


# --------------------------------------------------------------------------- training loops


def _select_sources(datasets: dict[str, list[LabeledPair]], cfg: TrainConfig) -> dict[str, list[LabeledPair]]:
    chosen = {s: p for s, p in datasets.items() if p and (cfg.sources is None or s in cfg.sources)}
    for s in chosen:
        if s not in cfg.task_map:
            raise ConfigurationError(f"no loss mapped for source {s!r}", field="task_map")
    return chosen


def train_bi(params: BiEncoderParams, datasets: dict[str, list[LabeledPair]], features: PairFeatures,
             cfg: TrainConfig | None = None,
             on_epoch: Callable[[int, BiEncoderParams], dict] | None = None
             ) -> tuple[BiEncoderParams, TrainHistory]:
    """Train the student on the enabled label sources with their mapped losses."""
    cfg = cfg or TrainConfig()
    data = _select_sources(datasets, cfg)
    history = TrainHistory()
    if cfg.epochs == 0 or not data:
        if not data and cfg.epochs:
            raise ConfigurationError("no enabled dataset", field="sources")
        return params, history
    schedule = make_schedule({s: len(p) for s, p in data.items()}, cfg.batch_size, cfg.epochs, cfg.seed)
    per_epoch = len(schedule) // cfg.epochs
    state = init_optimizer(params, cfg.optimizer, cfg.learning_rate)
    for step, (source, rows) in enumerate(schedule):
        loss_id = cfg.task_map[source]
        batch = features.pair_batch(data[source], rows, source)
        grads, value = backprop(params, batch, loss_id, cfg.loss_config(loss_id), cfg.matryoshka_for(source))
        w = cfg.weight_for(source)
        if w != 1.0:
            grads = {k: w * g for k, g in grads.items()}
        params, state = optimizer_step(params, grads, state)
        history.steps.append(StepRecord(step, source, value))
        if on_epoch is not None and per_epoch and (step + 1) % per_epoch == 0:
            epoch = (step + 1) // per_epoch - 1
            history.epochs.append({"epoch": epoch, **on_epoch(epoch, params)})
    log.debug("trained bi-encoder for %d steps over %s", len(schedule), sorted(data))
    return params, history


def train_single_task(params: BiEncoderParams, pairs: list[LabeledPair], loss_id: str,
                      features: PairFeatures, cfg: TrainConfig | None = None) -> BiEncoderParams:
    """Plain epoch loop over one dataset, without the multi-source scheduler."""
    cfg = cfg or TrainConfig()
    source = pairs[0].source
    stream = source_stream(len(pairs), cfg.batch_size, cfg.seed, source)
    state = init_optimizer(params, cfg.optimizer, cfg.learning_rate)
    n_steps = cfg.epochs * _batches_per_pass(len(pairs), cfg.batch_size)
    for _ in range(n_steps):
        batch = features.pair_batch(pairs, next(stream), source)
        grads, _ = backprop(params, batch, loss_id, cfg.loss_config(loss_id), cfg.matryoshka_for(source))
        params, state = optimizer_step(params, grads, state)
    return params


def train_cross(params: CrossEncoderParams, llm_dataset: list[LabeledPair], features: PairFeatures,
                cfg: TrainConfig | None = None,
                checkpoint_dir=None) -> tuple[CrossEncoderParams, TrainHistory]:
    """Fit the cross-encoder to judge labels with binary cross-entropy."""
    cfg = cfg or TrainConfig()
    labels = {p.value for p in llm_dataset}
    if not {0.0, 1.0} <= labels:
        raise DegenerateDataError("judge dataset must contain both classes")
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history
    schedule = make_schedule({"LLM": len(llm_dataset)}, cfg.batch_size, cfg.epochs, cfg.seed)
    per_epoch = len(schedule) // cfg.epochs
    state = init_optimizer(params, cfg.optimizer, cfg.learning_rate)
    for step, (source, rows) in enumerate(schedule):
        grads, value = backprop(params, features.cross_batch(llm_dataset, rows))
        params, state = optimizer_step(params, grads, state)
        history.steps.append(StepRecord(step, source, value))
        if checkpoint_dir is not None and (step + 1) % per_epoch == 0:
            save_params(f"{checkpoint_dir}/cross_epoch{(step + 1) // per_epoch:03d}.bin", params)
    return params, history
