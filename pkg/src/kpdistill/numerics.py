"""Backpropagation through the toy encoders, optimisers and gradient checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp

from . import losses as L
from .encoders import (BiEncoderParams, CrossBags, CrossEncoderParams, bi_backward, bi_forward,
                       cross_backward, cross_forward)
from .exceptions import BatchTooSmallError, ConfigurationError, NumericOverflowError, ShapeError, TooLargeError


@dataclass
class PairBatch:
    """Single-source student batch: item bags, keyphrase bags and per-row targets."""

    items: sp.csr_matrix
    keyphrases: sp.csr_matrix
    targets: np.ndarray
    source: str = ""

    def __len__(self):
        return self.items.shape[0]


@dataclass
class CrossBatch:
    bags: CrossBags
    labels: np.ndarray

    def __len__(self):
        return len(self.bags)


def pearson_corr(a, b) -> float:
    """Sample Pearson correlation; ``nan`` when either input has zero variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch {a.size} vs {b.size}")
    if a.size < 2:
        raise BatchTooSmallError("correlation needs at least 2 points")
    ac, bc = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(ac @ ac), np.sqrt(bc @ bc)
    if na <= 1e-12 * max(1.0, np.abs(a).max()) or nb <= 1e-12 * max(1.0, np.abs(b).max()):
        return float("nan")
    return float(np.clip((ac @ bc) / np.sqrt((ac @ ac) * (bc @ bc)), -1.0, 1.0))


def _check_finite(arr, path):
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError("non-finite value", path=path)


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    value = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    p = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return value, (p - labels) / logits.size


def backprop(params, batch, loss_id: str = "bce", loss_cfg: Any = None,
             matryoshka: L.MatryoshkaConfig | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Exact parameter gradients and loss value for one batch.

    Bi-encoder params take a :class:`PairBatch` and any loss id from
    :data:`losses.LOSS_IDS`; cross-encoder params take a :class:`CrossBatch`
    and are trained with binary cross-entropy.
    """
    if isinstance(params, CrossEncoderParams):
        logits, cache = cross_forward(params, batch.bags)
        _check_finite(logits, "cross/logits")
        value, g = bce_with_logits(logits, np.asarray(batch.labels, dtype=np.float64))
        grads = cross_backward(params, cache, g)
    elif isinstance(params, BiEncoderParams):
        u, cu = bi_forward(params, batch.items)
        v, cv = bi_forward(params, batch.keyphrases)
        _check_finite(u, "bi/item_embeddings")
        _check_finite(v, "bi/keyphrase_embeddings")
        if matryoshka is not None:
            out = L.matryoshka_wrap(loss_id, u, v, batch.targets, matryoshka, loss_cfg)
        else:
            out = L.embedding_loss(loss_id, u, v, batch.targets, loss_cfg)
        gi = bi_backward(params, cu, out.grads[0])
        gk = bi_backward(params, cv, out.grads[1])
        grads = {k: gi[k] + gk[k] for k in gi}
        value = out.value
    else:
        raise TypeError(f"unsupported parameter type {type(params).__name__}")
    if not np.isfinite(value):
        raise NumericOverflowError("non-finite loss", path=f"loss/{loss_id}")
    for name, g in grads.items():
        _check_finite(g, f"grad/{name}")
    return grads, value


def loss_value(params, batch, loss_id="bce", loss_cfg=None, matryoshka=None) -> float:
    return backprop(params, batch, loss_id, loss_cfg, matryoshka)[1]


# --------------------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_path: str
    eps: float
    n_checked: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def finite_diff_check(params, batch, loss_id: str = "bce", eps: float = 1e-5, loss_cfg=None,
                      matryoshka=None, analytic: dict | None = None,
                      max_params: int = 100_000, floor_ratio: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central differences for every parameter.

    The relative error of an entry is ``|a - n| / max(|a| + |n|, floor)``,
    where ``floor`` is ``floor_ratio`` times the largest gradient magnitude in
    the same parameter array.  The difference quotient carries round-off of
    roughly ``1e-16 * |loss| / eps`` (about 1e-9 at eps 1e-5 for losses near
    100), so entries below ``floor`` cannot be resolved to 1e-4 and would
    otherwise report that noise as error.

    ``analytic`` overrides the gradients under test (useful to confirm the
    checker itself flags a broken gradient).
    """
    if params.size > max_params:
        raise TooLargeError(f"{params.size} parameters exceed the guard of {max_params}")
    if analytic is None:
        analytic, _ = backprop(params, batch, loss_id, loss_cfg, matryoshka)
    work = params.copy()
    worst, worst_path, n = 0.0, "", 0
    for name, arr in work.arrays().items():
        flat = arr.reshape(-1)
        a_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        numeric = np.empty_like(a_flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_value(work, batch, loss_id, loss_cfg, matryoshka)
            flat[j] = orig - eps
            down = loss_value(work, batch, loss_id, loss_cfg, matryoshka)
            flat[j] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        n += flat.size
        scale = max(np.max(np.abs(a_flat), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        denom = np.maximum(np.abs(a_flat) + np.abs(numeric), max(floor_ratio * scale, 1e-300))
        rel = np.abs(a_flat - numeric) / denom
        j = int(np.argmax(rel)) if rel.size else 0
        if rel.size and rel[j] > worst:
            idx = np.unravel_index(j, arr.shape)
            worst, worst_path = float(rel[j]), f"{name}[{','.join(map(str, idx))}]"
    return GradCheckReport(worst, worst_path, eps, n)


# --------------------------------------------------------------------------- optimisers


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    m: dict[str, np.ndarray] | None = None
    v: dict[str, np.ndarray] | None = None
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}", field="optimizer.kind")
        if not self.learning_rate > 0:
            raise ConfigurationError("must be > 0", field="optimizer.lr")


def init_optimizer(params, kind: str = "adam", learning_rate: float = 1e-3) -> OptimizerState:
    state = OptimizerState(kind, learning_rate)
    if state.kind == "adam":
        state.m = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        state.v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    return state


def optimizer_step(params, grads: dict[str, np.ndarray], state: OptimizerState):
    """Apply one SGD or Adam update; returns ``(new_params, new_state)``."""
    arrays = params.arrays()
    for k, a in arrays.items():
        if k not in grads or np.shape(grads[k]) != a.shape:
            raise ShapeError(f"gradient for {k} has shape {np.shape(grads.get(k))}, expected {a.shape}")
    lr = state.learning_rate
    step = state.step + 1
    if state.kind == "sgd":
        new = {k: a - lr * grads[k] for k, a in arrays.items()}
        return params.replace(**new), dataclasses.replace(state, step=step)
    if state.m is None:
        state = init_optimizer(params, "adam", lr)
    b1, b2 = state.beta1, state.beta2
    m = {k: b1 * state.m[k] + (1 - b1) * grads[k] for k in arrays}
    v = {k: b2 * state.v[k] + (1 - b2) * grads[k] ** 2 for k in arrays}
    c1, c2 = 1 - b1**step, 1 - b2**step
    new = {k: a - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps) for k, a in arrays.items()}
    return params.replace(**new), dataclasses.replace(state, m=m, v=v, step=step)
