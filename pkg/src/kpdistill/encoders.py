"""Hashing tokenizer and the two toy encoders.

Both encoders pool token rows through a sparse "bag" matrix (one row per
sequence, entries are token counts), so pooling is order-independent by
construction and its gradient is a single sparse transpose product.

Token id 0 is reserved for the separator; words hash into [1, vocab_size).
"""

from __future__ import annotations

import hashlib
import io
import re
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, EmptyInputError, ShapeError

SEP_ID = 0
_TOKEN_RE = re.compile(r"[0-9a-z]+")
_MAGIC = b"KPDP"
_VERSION = 1


def tokenize(text: str, vocab_size: int) -> np.ndarray:
    """Lowercase, split on non-alphanumerics and hash every token into ``[1, vocab_size)``."""
    if vocab_size < 2:
        raise ConfigurationError("must be >= 2", field="vocab_size")
    words = _TOKEN_RE.findall(text.lower())
    if not words:
        raise EmptyInputError(f"no alphanumeric content in {text!r}")
    return np.array([_hash_token(w, vocab_size) for w in words], dtype=np.int64)


def _hash_token(word: str, vocab_size: int) -> int:
    h = int.from_bytes(hashlib.blake2b(word.encode(), digest_size=8).digest(), "little")
    return 1 + h % (vocab_size - 1)


def bag_matrix(seqs: Sequence[np.ndarray], vocab_size: int) -> sp.csr_matrix:
    """Sparse count matrix with one row per token sequence (empty rows allowed)."""
    lengths = [len(s) for s in seqs]
    cols = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs]) if seqs else np.zeros(0, np.int64)
    rows = np.repeat(np.arange(len(seqs)), lengths)
    if cols.size and (cols.min() < 0 or cols.max() >= vocab_size):
        raise ShapeError("token id outside the vocabulary")
    m = sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(len(seqs), vocab_size))
    m.sum_duplicates()
    m.sort_indices()
    return m


def _row_lengths(bags: sp.csr_matrix) -> np.ndarray:
    return np.asarray(bags.sum(axis=1)).ravel()


def _mean_rows(bags: sp.csr_matrix) -> sp.csr_matrix:
    lengths = _row_lengths(bags)
    if np.any(lengths == 0):
        raise EmptyInputError("cannot pool an empty token sequence")
    return sp.diags(1.0 / lengths) @ bags


# --------------------------------------------------------------------------- params


class _Params:
    """Named float64 arrays with a binary round-trip."""

    kind = ""
    names: tuple[str, ...] = ()

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names}

    def replace(self, **arrays):
        merged = {**self.arrays(), **arrays}
        return type(self)(**merged)

    def copy(self):
        return type(self)(**{n: a.copy() for n, a in self.arrays().items()})

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays().values())

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]

    @property
    def hidden(self) -> int:
        return self.token_table.shape[1]

    def to_bytes(self) -> bytes:
        return write_arrays(self.kind, self.arrays())

    @classmethod
    def from_bytes(cls, data: bytes):
        kind, arrays = read_arrays(data)
        if kind != cls.kind:
            raise ShapeError(f"expected {cls.kind!r} parameters, found {kind!r}")
        return cls(**arrays)

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))

    __hash__ = None


@dataclass(eq=False)
class BiEncoderParams(_Params):
    token_table: np.ndarray
    projection: np.ndarray

    kind = "bi"
    names = ("token_table", "projection")

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    @classmethod
    def init(cls, vocab_size: int = 4096, hidden: int = 32, dim: int = 256, seed: int = 0,
             min_prefix: int = 1) -> "BiEncoderParams":
        if dim % min_prefix:
            raise ConfigurationError(f"dim {dim} not divisible by {min_prefix}", field="dim")
        rng = np.random.default_rng([seed, 11])
        return cls(rng.normal(0.0, 1.0, (vocab_size, hidden)),
                   rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, dim)))


@dataclass(eq=False)
class CrossEncoderParams(_Params):
    token_table: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    kind = "cross"
    names = ("token_table", "w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, vocab_size: int = 4096, hidden: int = 32, seed: int = 0) -> "CrossEncoderParams":
        rng = np.random.default_rng([seed, 12])
        n_in = 2 * hidden + 1
        return cls(rng.normal(0.0, 1.0, (vocab_size, hidden)),
                   rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, hidden)),
                   np.zeros(hidden),
                   rng.normal(0.0, 1.0 / np.sqrt(hidden), hidden),
                   np.zeros(1))


# --------------------------------------------------------------------------- bi-encoder


@dataclass
class BiCache:
    pool: sp.csr_matrix
    pooled: np.ndarray
    norms: np.ndarray
    emb: np.ndarray


def bi_forward(params: BiEncoderParams, bags: sp.csr_matrix) -> tuple[np.ndarray, BiCache]:
    """Mean-pool token rows, project, L2-normalise.  Returns (embeddings, cache)."""
    pool = _mean_rows(bags)
    pooled = pool @ params.token_table
    proj = pooled @ params.projection
    norms = np.linalg.norm(proj, axis=1)
    emb = proj / norms[:, None]
    return emb, BiCache(pool, pooled, norms, emb)


def bi_backward(params: BiEncoderParams, cache: BiCache, g_emb: np.ndarray) -> dict[str, np.ndarray]:
    emb = cache.emb
    g_proj = (g_emb - emb * np.sum(g_emb * emb, axis=1, keepdims=True)) / cache.norms[:, None]
    g_pooled = g_proj @ params.projection.T
    return {"token_table": np.asarray(cache.pool.T @ g_pooled),
            "projection": cache.pooled.T @ g_proj}


def encode_bi(params: BiEncoderParams, seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        raise EmptyInputError("empty token sequence")
    emb, _ = bi_forward(params, bag_matrix([seq], params.vocab_size))
    return emb[0]


def encode_texts(params: BiEncoderParams, texts: Sequence[str]) -> np.ndarray:
    bags = bag_matrix([tokenize(t, params.vocab_size) for t in texts], params.vocab_size)
    return bi_forward(params, bags)[0]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"dimension mismatch {u.shape} vs {v.shape}")
    return float(np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))


def matryoshka_prefix(emb: np.ndarray, dim: int) -> np.ndarray:
    """First ``dim`` coordinates, re-normalised to unit length (row-wise for 2-D input)."""
    emb = np.asarray(emb, dtype=np.float64)
    if dim < 1 or dim > emb.shape[-1]:
        raise ConfigurationError(f"prefix {dim} outside [1, {emb.shape[-1]}]", field="dim_prefix")
    head = emb[..., :dim]
    return head / np.linalg.norm(head, axis=-1, keepdims=True)


# --------------------------------------------------------------------------- cross-encoder


@dataclass
class CrossBags:
    """Per-pair bags for the three input segments."""

    kp: sp.csr_matrix
    category: sp.csr_matrix
    title: sp.csr_matrix

    def __len__(self):
        return self.kp.shape[0]

    def take(self, rows) -> "CrossBags":
        return CrossBags(self.kp[rows], self.category[rows], self.title[rows])


def overlap_feature(kp: sp.csr_matrix, title: sp.csr_matrix) -> np.ndarray:
    """Fraction of keyphrase tokens (with multiplicity) whose id occurs in the title."""
    present = (title > 0).astype(np.float64)
    hits = np.asarray(kp.multiply(present).sum(axis=1)).ravel()
    return hits / _row_lengths(kp)


@dataclass
class CrossCache:
    concat_pool: sp.csr_matrix
    kp_pool: sp.csr_matrix
    item_pool: sp.csr_matrix
    kp_mean: np.ndarray
    item_mean: np.ndarray
    z: np.ndarray
    act: np.ndarray


def cross_forward(params: CrossEncoderParams, bags: CrossBags) -> tuple[np.ndarray, CrossCache]:
    """Return raw logits (B,) and the cache for :func:`cross_backward`.

    Input ``kp [SEP] category [SEP] title`` is mean-pooled as one bag, then
    joined with the keyphrase/title overlap fraction and the elementwise
    product of the two segment means before the two-layer scorer.
    """
    if np.any(_row_lengths(bags.kp) == 0) or np.any(_row_lengths(bags.title) == 0):
        raise EmptyInputError("keyphrase and title must be non-empty")
    n = len(bags)
    sep = sp.csr_matrix((np.full(n, 2.0), (np.arange(n), np.zeros(n, np.int64))),
                        shape=bags.kp.shape)
    item = bags.category + bags.title
    concat_pool = _mean_rows(bags.kp + item + sep)
    kp_pool = _mean_rows(bags.kp)
    item_pool = _mean_rows(item)
    E = params.token_table
    kp_mean = kp_pool @ E
    item_mean = item_pool @ E
    z = np.hstack([concat_pool @ E, overlap_feature(bags.kp, bags.title)[:, None], kp_mean * item_mean])
    act = np.tanh(z @ params.w1 + params.b1)
    logits = act @ params.w2 + params.b2[0]
    return logits, CrossCache(concat_pool, kp_pool, item_pool, kp_mean, item_mean, z, act)


def cross_backward(params: CrossEncoderParams, cache: CrossCache, g_logits: np.ndarray) -> dict[str, np.ndarray]:
    h = params.hidden
    g_act = g_logits[:, None] * params.w2[None, :]
    g_pre = g_act * (1.0 - cache.act**2)
    g_z = g_pre @ params.w1.T
    g_concat, g_prod = g_z[:, :h], g_z[:, h + 1:]
    g_table = (cache.concat_pool.T @ g_concat
               + cache.kp_pool.T @ (g_prod * cache.item_mean)
               + cache.item_pool.T @ (g_prod * cache.kp_mean))
    return {"token_table": np.asarray(g_table),
            "w1": cache.z.T @ g_pre,
            "b1": g_pre.sum(axis=0),
            "w2": cache.act.T @ g_logits,
            "b2": np.array([g_logits.sum()])}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def score_cross(params: CrossEncoderParams, kp, category, title) -> float:
    """Relevance score in [0, 1] for one (keyphrase, category, title) triple."""
    V = params.vocab_size
    kp = np.asarray(kp, dtype=np.int64)
    title = np.asarray(title, dtype=np.int64)
    if kp.size == 0 or title.size == 0:
        raise EmptyInputError("keyphrase and title must be non-empty")
    bags = CrossBags(bag_matrix([kp], V), bag_matrix([np.asarray(category, np.int64)], V),
                     bag_matrix([title], V))
    return float(sigmoid(cross_forward(params, bags)[0])[0])


# --------------------------------------------------------------------------- binary format
#
# magic "KPDP" | u16 version | u16 len + kind | u32 n_arrays
# per array: u16 len + name | 1-byte dtype ('f' float64, 'i' int64) | u8 ndim | u64 dims...
# then every array's data, row-major little-endian, in header order.


def write_arrays(kind: str, arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<H", _VERSION))
    kb = kind.encode()
    buf.write(struct.pack("<H", len(kb)) + kb)
    buf.write(struct.pack("<I", len(arrays)))
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = b"i" if np.issubdtype(arr.dtype, np.integer) else b"f"
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb + code + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype="<i8" if code == b"i" else "<f8"))
    for arr in payload:
        buf.write(arr.tobytes())
    return buf.getvalue()


def read_arrays(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    view = memoryview(data)
    if bytes(view[:4]) != _MAGIC:
        raise ShapeError("bad magic")
    (version,) = struct.unpack_from("<H", view, 4)
    if version != _VERSION:
        raise ShapeError(f"unsupported format version {version}")
    pos = 6
    (klen,) = struct.unpack_from("<H", view, pos)
    kind = bytes(view[pos + 2:pos + 2 + klen]).decode()
    pos += 2 + klen
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    specs = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", view, pos)
        name = bytes(view[pos + 2:pos + 2 + nlen]).decode()
        pos += 2 + nlen
        code = bytes(view[pos:pos + 1])
        (ndim,) = struct.unpack_from("<B", view, pos + 1)
        shape = struct.unpack_from(f"<{ndim}Q", view, pos + 2)
        pos += 2 + 8 * ndim
        specs.append((name, code, shape))
    arrays = {}
    for name, code, shape in specs:
        dtype = np.dtype("<i8" if code == b"i" else "<f8")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.int64 if code == b"i" else np.float64)
        pos += n * 8
    return kind, arrays


def save_params(path, params: _Params) -> None:
    with open(path, "wb") as fh:
        fh.write(params.to_bytes())


def load_params(path) -> BiEncoderParams | CrossEncoderParams:
    with open(path, "rb") as fh:
        data = fh.read()
    kind, arrays = read_arrays(data)
    cls = {"bi": BiEncoderParams, "cross": CrossEncoderParams}.get(kind)
    if cls is None:
        raise ShapeError(f"not a parameter file (kind {kind!r})")
    return cls(**arrays)
