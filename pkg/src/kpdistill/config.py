"""YAML pipeline configuration, validated with pydantic before any work starts."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import losses as L
from .exceptions import ConfigurationError
from .pipeline import DataConfig, EncoderConfig
from .synthworld import SOURCES, LogConfig, WorldConfig
from .trainer import ABLATION_COMBOS, DEFAULT_TASK_MAP, TrainConfig


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorldBlock(_Block):
    seed: Optional[int] = None  # falls back to the top-level seed
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


class LogBlock(_Block):
    n_impressions: int = 3000
    position_decay: float = 0.85
    sr_filter_threshold: float = 0.6
    ctr_threshold: float = 0.05
    min_impressions: int = 20
    min_clicks: int = 2
    popularity_sd: float = 0.75


class DataBlock(_Block):
    n_llm_pairs: int = Field(6000, ge=1)
    n_sr_pairs: int = Field(4000, ge=1)
    n_assistant_pairs: int = Field(16000, ge=0)
    sr_label_threshold: float = 0.5
    noise_rate: float = Field(0.05, ge=0.0, le=1.0)
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)


class EncoderBlock(_Block):
    vocab_size: int = Field(4096, ge=2)
    hidden: int = Field(32, ge=1)
    dim: int = Field(256, ge=1)


class MatryoshkaBlock(_Block):
    enabled: bool = True
    dims: list[int] = [64, 128, 256]
    weights: Optional[list[float]] = None
    tasks: Optional[dict[str, bool]] = None


class LossBlock(_Block):
    task_map: dict[str, str] = Field(default_factory=lambda: dict(DEFAULT_TASK_MAP))
    mnr: dict[str, float] = Field(default_factory=dict)
    contrastive: dict[str, float] = Field(default_factory=dict)
    cosent: dict[str, float] = Field(default_factory=dict)
    matryoshka: MatryoshkaBlock = Field(default_factory=MatryoshkaBlock)

    @field_validator("task_map")
    @classmethod
    def _known(cls, v):
        for src, loss in v.items():
            if src not in SOURCES:
                raise ValueError(f"unknown label source {src!r}")
            if loss not in L.LOSS_IDS:
                raise ValueError(f"unknown loss {loss!r}")
        return v


class StageTrainBlock(_Block):
    epochs: int = Field(6, ge=0)
    batch_size: int = Field(32, ge=2)
    learning_rate: float = Field(1e-3, gt=0)
    optimizer: str = "adam"
    sources: Optional[list[str]] = None
    task_weights: Optional[dict[str, float]] = None


class TrainerBlock(_Block):
    cross: StageTrainBlock = Field(default_factory=lambda: StageTrainBlock(learning_rate=3e-3))
    bi: StageTrainBlock = Field(default_factory=StageTrainBlock)


class RetrievalBlock(_Block):
    k: int = Field(20, ge=1)
    dim_prefix: Optional[int] = Field(None, ge=1)


class EvaluationBlock(_Block):
    filter_threshold: float = 0.5
    judge_sample_size: int = Field(10_000, ge=1)
    sample_size: Optional[int] = Field(None, ge=1)
    other_recall_per_item: int = Field(5, ge=0)
    grid_step: float = Field(0.01, gt=0, le=1)


class AblationBlock(_Block):
    combos: list[list[str]] = Field(default_factory=lambda: [list(c) for c in ABLATION_COMBOS])


class PipelineConfig(_Block):
    seed: int = 7
    out: str = "runs/default"
    world: WorldBlock = Field(default_factory=WorldBlock)
    logs: LogBlock = Field(default_factory=LogBlock)
    data: DataBlock = Field(default_factory=DataBlock)
    encoder: EncoderBlock = Field(default_factory=EncoderBlock)
    losses: LossBlock = Field(default_factory=LossBlock)
    trainer: TrainerBlock = Field(default_factory=TrainerBlock)
    retrieval: RetrievalBlock = Field(default_factory=RetrievalBlock)
    evaluation: EvaluationBlock = Field(default_factory=EvaluationBlock)
    ablation: AblationBlock = Field(default_factory=AblationBlock)

    @model_validator(mode="after")
    def _consistent(self):
        if self.retrieval.dim_prefix is not None and self.retrieval.dim_prefix > self.encoder.dim:
            raise ValueError("retrieval.dim_prefix exceeds encoder.dim")
        mat = self.losses.matryoshka
        if mat.enabled and mat.dims and mat.dims[-1] > self.encoder.dim:
            raise ValueError("losses.matryoshka.dims exceed encoder.dim")
        for combo in self.ablation.combos:
            for src in combo:
                if src not in SOURCES:
                    raise ValueError(f"unknown label source {src!r} in ablation.combos")
        return self

    # ------------------------------------------------------------------ conversions

    def digest(self) -> str:
        """Stable hash of the fully-resolved config (output directory excluded)."""
        blob = json.dumps(self.model_dump(mode="json", exclude={"out"}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def world_config(self) -> WorldConfig:
        d = self.world.model_dump()
        d["seed"] = self.seed if d["seed"] is None else d["seed"]
        return WorldConfig(**d)

    def data_config(self) -> DataConfig:
        return DataConfig(**self.data.model_dump(), logs=LogConfig(**self.logs.model_dump()))

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(**self.encoder.model_dump())

    def matryoshka_config(self) -> L.MatryoshkaConfig | None:
        mat = self.losses.matryoshka
        if not mat.enabled or not mat.dims:
            return None
        return L.MatryoshkaConfig(tuple(mat.dims), None if mat.weights is None else tuple(mat.weights))

    def _train(self, block: StageTrainBlock, matryoshka) -> TrainConfig:
        loss_configs = {name: L.make_config(name, getattr(self.losses, name))
                        for name in ("mnr", "contrastive", "cosent")}
        return TrainConfig(batch_size=block.batch_size, epochs=block.epochs, seed=self.seed,
                           task_map=dict(self.losses.task_map), loss_configs=loss_configs,
                           matryoshka=matryoshka, matryoshka_tasks=self.losses.matryoshka.tasks,
                           task_weights=block.task_weights, optimizer=block.optimizer,
                           learning_rate=block.learning_rate,
                           sources=None if block.sources is None else tuple(block.sources))

    def cross_train_config(self) -> TrainConfig:
        return self._train(self.trainer.cross, None)

    def bi_train_config(self) -> TrainConfig:
        return self._train(self.trainer.bi, self.matryoshka_config())


def _first_error(err: ValidationError) -> ConfigurationError:
    e = err.errors()[0]
    field = ".".join(str(p) for p in e["loc"]) or None
    return ConfigurationError(e["msg"], field=field)


def parse_config(data: dict | None, **overrides) -> PipelineConfig:
    """Validate a raw mapping; ``overrides`` replace top-level keys (``seed``, ``out``)."""
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = PipelineConfig.model_validate(data)
        # Surface the module-level checks too (bad loss params, matryoshka order, ...).
        cfg.world_config(), cfg.data_config(), cfg.bi_train_config(), cfg.cross_train_config()
    except ValidationError as err:
        raise _first_error(err) from None
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(str(err)) from None
    return cfg


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a YAML config file (or defaults when ``path`` is None)."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}", field="config")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigurationError(f"unparseable YAML: {err}".splitlines()[0], field="config") from None
        if not isinstance(data, dict):
            raise ConfigurationError("top level must be a mapping", field="config")
    return parse_config(data, **overrides)


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)

