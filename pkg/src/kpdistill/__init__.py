"""Keyphrase relevance distillation: LLM judge -> cross-encoder -> bi-encoder."""

from .config import PipelineConfig, load_config
from .encoders import BiEncoderParams, CrossEncoderParams, encode_texts, load_params, save_params
from .estimators import BiEncoderEmbedder, CosineKNN, CrossEncoderScorer
from .evaluation import EvalReport, classification_metrics, production_eval_from_results, select_threshold
from .exceptions import (BatchTooSmallError, ConfigurationError, DegenerateDataError, EmptyIndexError,
                         EmptyInputError, InvalidWorldError, KpDistillError, MissingArtifactError,
                         NumericOverflowError, ShapeError, StaleIndexError, TooLargeError,
                         UntrainedModelError)
from .losses import (contrastive_loss, cosent_loss, matryoshka_wrap, mnr_loss, mse_loss,
                     pearson_ri_loss)
from .retrieval import build_index, knn
from .synthworld import WorldConfig, generate_world, simulate_search_logs
from .trainer import TrainConfig, train_bi, train_cross

__version__ = "0.1.0"

__all__ = [
    "Keyphrase",
    "relevance",
    "distillation",
    "LLM",
    "judge",
    "cross",
    "encoder",
    "bi",
    "encoder",
    "PipelineConfig",
    "load_config",
    "BiEncoderParams",
    "CrossEncoderParams",
    "encode_texts",
    "load_params",
    "save_params",
    "BiEncoderEmbedder",
    "CosineKNN",
    "CrossEncoderScorer",
    "EvalReport",
    "classification_metrics",
    "production_eval_from_results",
    "select_threshold",
    "BatchTooSmallError",
    "ConfigurationError",
    "DegenerateDataError",
    "EmptyIndexError",
    "EmptyInputError",
    "InvalidWorldError",
    "KpDistillError",
    "MissingArtifactError",
    "NumericOverflowError",
    "ShapeError",
    "StaleIndexError",
    "TooLargeError",
    "UntrainedModelError",
    "contrastive_loss",
    "cosent_loss",
    "matryoshka_wrap",
    "mnr_loss",
    "mse_loss",
    "pearson_ri_loss",
    "build_index",
    "knn",
    "WorldConfig",
    "generate_world",
    "simulate_search_logs",
    "TrainConfig",
    "train_bi",
    "train_cross",
]
