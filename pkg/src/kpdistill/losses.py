"""Training losses with exact input gradients.

Embedding-consuming losses (``mnr``, ``contrastive``) take rows of unit
vectors and use their dot products as cosines.  Score-consuming losses
(``cosent``, ``pearson``, ``mse``) take a teacher score vector and the
student's cosines and differentiate with respect to the student only.

Every function returns a :class:`LossOutput` whose ``grads`` tuple matches
the differentiable inputs in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .exceptions import BatchTooSmallError, ConfigurationError, ShapeError

LOSS_IDS = ("mnr", "contrastive", "cosent", "pearson", "mse")
EMBEDDING_LOSSES = ("mnr", "contrastive")


@dataclass(frozen=True)
class MnrConfig:
    temperature: float = 0.05

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError("must be > 0", field="temperature")


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 0.5

    def __post_init__(self):
        if not self.margin > 0:
            raise ConfigurationError("must be > 0", field="margin")


@dataclass(frozen=True)
class CosentConfig:
    scale: float = 20.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigurationError("must be > 0", field="scale")


@dataclass(frozen=True)
class MatryoshkaConfig:
    dims: tuple[int, ...] = (64, 128, 256)
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims) or any(b <= a for a, b in zip(dims, dims[1:])):
            raise ConfigurationError("must be strictly ascending positive ints", field="dims")
        weights = tuple(float(w) for w in self.weights) if self.weights is not None else (1.0,) * len(dims)
        if len(weights) != len(dims) or any(w <= 0 for w in weights):
            raise ConfigurationError("need one positive weight per dim", field="weights")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "weights", weights)


@dataclass
class LossOutput:
    value: float
    grads: tuple[np.ndarray, ...] = field(default_factory=tuple)


_DEFAULT_CONFIGS = {"mnr": MnrConfig, "contrastive": ContrastiveConfig, "cosent": CosentConfig}


def default_config(loss_id: str):
    if loss_id not in LOSS_IDS:
        raise ConfigurationError(f"unknown loss {loss_id!r}", field="loss")
    cls = _DEFAULT_CONFIGS.get(loss_id)
    return cls() if cls else None


def make_config(loss_id: str, params: dict | None = None):
    """Build the config block for ``loss_id`` from a plain dict."""
    if loss_id not in LOSS_IDS:
        raise ConfigurationError(f"unknown loss {loss_id!r}", field="loss")
    cls = _DEFAULT_CONFIGS.get(loss_id)
    if cls is None:
        if params:
            raise ConfigurationError(f"{loss_id} takes no parameters", field=loss_id)
        return None
    try:
        return cls(**(params or {}))
    except TypeError as exc:
        raise ConfigurationError(str(exc), field=loss_id) from None


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _pair_lengths(a, b, minimum: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch {a.size} vs {b.size}")
    if a.size < minimum:
        raise BatchTooSmallError(f"need at least {minimum} scores, got {a.size}")
    return a, b


# --------------------------------------------------------------------------- embedding losses


def mnr_loss(anchors, positives, cfg: MnrConfig | None = None) -> LossOutput:
    """In-batch-negatives softmax cross-entropy, averaged over anchors."""
    cfg = cfg or MnrConfig()
    A, P = _as_matrix(anchors), _as_matrix(positives)
    if A.shape != P.shape:
        raise ShapeError(f"anchor/positive shapes differ: {A.shape} vs {P.shape}")
    K = A.shape[0]
    if K < 2:
        raise BatchTooSmallError("MNR needs at least 2 pairs for in-batch negatives")
    S = (A @ P.T) / cfg.temperature
    lse = logsumexp(S, axis=1)
    value = float(np.mean(lse - np.diag(S)))
    G = np.exp(S - lse[:, None])
    G[np.diag_indices(K)] -= 1.0
    G /= K * cfg.temperature
    return LossOutput(value, (G @ P, G.T @ A))


def contrastive_loss(u, v, y, cfg: ContrastiveConfig | None = None) -> LossOutput:
    """Margin loss on cosine distance ``1 - u.v``, averaged over pairs."""
    cfg = cfg or ContrastiveConfig()
    single = np.asarray(u).ndim == 1
    U, Vm = _as_matrix(u), _as_matrix(v)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if U.shape != Vm.shape or y.shape != (U.shape[0],):
        raise ShapeError("u, v and y disagree in shape")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ConfigurationError("labels must be 0 or 1", field="y")
    d = 1.0 - np.sum(U * Vm, axis=1)
    hinge = np.maximum(0.0, cfg.margin - d)
    n = U.shape[0]
    value = float(np.mean(0.5 * (y * d**2 + (1.0 - y) * hinge**2)))
    g_d = (y * d - (1.0 - y) * hinge) / n
    gu, gv = -g_d[:, None] * Vm, -g_d[:, None] * U
    if single:
        gu, gv = gu[0], gv[0]
    return LossOutput(value, (gu, gv))


# --------------------------------------------------------------------------- score losses


def _centered_degenerate(x: np.ndarray) -> tuple[np.ndarray, float, bool]:
    xc = x - x.mean()
    norm = float(np.sqrt(xc @ xc))
    return xc, norm, norm <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def pearson_ri_loss(teacher_scores, student_scores) -> LossOutput:
    """``1 - corr(teacher, student)``; zero-variance input gives loss 1 and a zero gradient."""
    t, s = _pair_lengths(teacher_scores, student_scores, 2)
    tc, tn, t_deg = _centered_degenerate(t)
    sc, sn, s_deg = _centered_degenerate(s)
    if t_deg or s_deg:
        return LossOutput(1.0, (np.zeros_like(s),))
    # sqrt of the product (not tn * sn) makes identical inputs give exactly 1.
    corr = float(np.clip((tc @ sc) / np.sqrt((tc @ tc) * (sc @ sc)), -1.0, 1.0))
    grad = -(tc / (tn * sn) - corr * sc / sn**2)
    return LossOutput(1.0 - corr, (grad,))


def cosent_loss(teacher_scores, student_cosines, cfg: CosentConfig | None = None) -> LossOutput:
    """``log(1 + sum exp(scale * (s_b - s_a)))`` over pairs with ``teacher_a > teacher_b``."""
    cfg = cfg or CosentConfig()
    t, s = _pair_lengths(teacher_scores, student_cosines, 2)
    mask = t[:, None] > t[None, :]
    if not mask.any():
        return LossOutput(0.0, (np.zeros_like(s),))
    X = cfg.scale * (s[None, :] - s[:, None])
    terms = X[mask]
    value = float(logsumexp(np.concatenate([[0.0], terms])))
    W = np.zeros_like(X)
    W[mask] = np.exp(terms - value) * cfg.scale
    grad = W.sum(axis=0) - W.sum(axis=1)
    return LossOutput(value, (grad,))


def mse_loss(teacher_scores, student_cosines) -> LossOutput:
    t, s = _pair_lengths(teacher_scores, student_cosines, 1)
    r = s - t
    return LossOutput(float(np.mean(r**2)), (2.0 * r / r.size,))


# --------------------------------------------------------------------------- dispatch


def embedding_loss(loss_id: str, u, v, targets, cfg: Any = None) -> LossOutput:
    """Evaluate any loss on paired embedding rows; grads are (d_u, d_v).

    ``targets`` is ignored by ``mnr``, holds binary labels for ``contrastive``
    and teacher scores for the score-consuming losses (cosines are row dot
    products of ``u`` and ``v``).
    """
    if loss_id == "mnr":
        return mnr_loss(u, v, cfg)
    if loss_id == "contrastive":
        return contrastive_loss(u, v, targets, cfg)
    U, Vm = _as_matrix(u), _as_matrix(v)
    cos = np.sum(U * Vm, axis=1)
    if loss_id == "pearson":
        out = pearson_ri_loss(targets, cos)
    elif loss_id == "cosent":
        out = cosent_loss(targets, cos, cfg)
    elif loss_id == "mse":
        out = mse_loss(targets, cos)
    else:
        raise ConfigurationError(f"unknown loss {loss_id!r}", field="loss")
    g = out.grads[0][:, None]
    return LossOutput(out.value, (g * Vm, g * U))


def _prefix_normalize(X: np.ndarray, m: int):
    head = X[:, :m]
    norms = np.linalg.norm(head, axis=1, keepdims=True)
    return head / norms, norms


def _prefix_backward(Xn: np.ndarray, norms: np.ndarray, g: np.ndarray) -> np.ndarray:
    return (g - Xn * np.sum(g * Xn, axis=1, keepdims=True)) / norms


def matryoshka_wrap(loss_id: str, u, v, targets, cfg: MatryoshkaConfig, loss_cfg: Any = None) -> LossOutput:
    """Weighted sum of ``loss_id`` over nested embedding prefixes.

    Prefixes shorter than the full width are re-normalised before the loss;
    the full width is used as given (inputs are already unit rows).  Gradients
    flow back into the full-width rows.
    """
    U, Vm = _as_matrix(u), _as_matrix(v)
    d = U.shape[1]
    if cfg.dims[-1] > d:
        raise ConfigurationError(f"prefix {cfg.dims[-1]} exceeds embedding dim {d}", field="dims")
    total = 0.0
    gU, gV = np.zeros_like(U), np.zeros_like(Vm)
    for m, w in zip(cfg.dims, cfg.weights):
        if m == d:
            out = embedding_loss(loss_id, U, Vm, targets, loss_cfg)
            gU += w * out.grads[0]
            gV += w * out.grads[1]
        else:
            Un, un = _prefix_normalize(U, m)
            Vn, vn = _prefix_normalize(Vm, m)
            out = embedding_loss(loss_id, Un, Vn, targets, loss_cfg)
            gU[:, :m] += w * _prefix_backward(Un, un, out.grads[0])
            gV[:, :m] += w * _prefix_backward(Vn, vn, out.grads[1])
        total += w * out.value
    return LossOutput(total, (gU, gV))
