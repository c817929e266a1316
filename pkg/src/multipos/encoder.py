"""Hashing bag-of-words encoder with a hand-written backward pass.

A sentence is lowercased, split on whitespace/punctuation, and each
token is FNV-1a-hashed into an embedding-table row. Rows are
mean-pooled, passed through a square projection, and L2-normalized
with a 1e-12 smoothed norm. Parameters and optimizer moments are
stored as float32 (the checkpoint dtype). Forward and backward
passes run in float64 so finite-difference checks hold; the Adam
update itself runs vectorized in float32, which keeps full-table
updates cheap and checkpoint round trips bitwise exact.

Checkpoint layout (little-endian, version 1):
    magic b"MPCL" | u32 version | u32 hash_bits | u32 dim | u32 adam_step
    | f32 embedding_table | f32 projection
    | f32 m_table | f32 m_projection | f32 v_table | f32 v_projection
    | u32 crc32 of all preceding bytes

beta1/beta2/eps are format constants (0.9, 0.999, 1e-8) and are not
serialized.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

CHECKPOINT_MAGIC = b"MPCL"
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    """A NaN or infinity reached the optimizer."""


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, max_len: int = 64, hash_bits: int = 16) -> list[int]:
    """Map text to at most max_len hashed token ids.

    Ids land in [1, 2**hash_bits); id 0 is reserved for empty text so an
    all-punctuation or empty sentence still encodes to something.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    if hash_bits < 1:
        raise ValueError(f"hash_bits must be at least 1, got {hash_bits}")
    words = _TOKEN_RE.findall(text.lower())
    if not words:
        return [0]
    space = (1 << hash_bits) - 1
    return [1 + fnv1a_64(w.encode("utf-8")) % space for w in words[:max_len]]


@dataclass
class ModelParams:
    embedding_table: np.ndarray
    projection: np.ndarray
    hash_bits: int
    dim: int

    def __post_init__(self) -> None:
        rows = 1 << self.hash_bits
        if self.embedding_table.shape != (rows, self.dim):
            raise ValueError(
                f"embedding_table shape {self.embedding_table.shape}, expected {(rows, self.dim)}"
            )
        if self.projection.shape != (self.dim, self.dim):
            raise ValueError(
                f"projection shape {self.projection.shape}, expected {(self.dim, self.dim)}"
            )
        self.embedding_table = np.ascontiguousarray(self.embedding_table, dtype=np.float32)
        self.projection = np.ascontiguousarray(self.projection, dtype=np.float32)


@dataclass
class EncodeCache:
    """Everything needed to replay the forward pass exactly."""

    token_ids: list[list[int]]
    pooled: np.ndarray
    projected: np.ndarray
    raw_norms: np.ndarray
    smooth_norms: np.ndarray


@dataclass
class ParamGrads:
    embedding_table: np.ndarray
    projection: np.ndarray


def encode(params: ModelParams, token_id_lists: list[list[int]]) -> tuple[np.ndarray, EncodeCache]:
    """Encode token-id lists to unit-norm rows, returning a replay cache."""
    if len(token_id_lists) == 0:
        raise ValueError("cannot encode an empty batch")
    d = params.dim
    rows = params.embedding_table.shape[0]
    pooled = np.empty((len(token_id_lists), d), dtype=np.float64)
    for b, ids in enumerate(token_id_lists):
        if len(ids) == 0:
            raise ValueError(f"sequence {b} is empty; tokenize maps empty text to [0]")
        idx = np.asarray(ids, dtype=np.intp)
        if idx.min() < 0 or idx.max() >= rows:
            raise ValueError(f"sequence {b} has token ids outside [0, {rows})")
        pooled[b] = params.embedding_table[idx].mean(axis=0, dtype=np.float64)
    projected = pooled @ params.projection.astype(np.float64)
    raw = np.linalg.norm(projected, axis=1)
    smooth = raw + 1e-12
    out = projected / smooth[:, None]
    cache = EncodeCache([list(ids) for ids in token_id_lists], pooled, projected, raw, smooth)
    return out, cache


def encode_backward(params: ModelParams, cache: EncodeCache, grad_output: np.ndarray) -> ParamGrads:
    """Exact parameter gradients for a cached encode call.

    Backpropagates through the smoothed normalization (the same 1e-12
    norm used forward), the projection, the mean pool, and finally
    scatter-adds into the embedding table so repeated tokens accumulate.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.projected.shape:
        raise ValueError(f"grad_output shape {g.shape}, expected {cache.projected.shape}")
    v = cache.projected
    n = cache.smooth_norms
    raw = cache.raw_norms

    grad_v = g / n[:, None]
    nz = raw > 0.0
    if nz.any():
        coef = (v[nz] * g[nz]).sum(axis=1) / (n[nz] * n[nz] * raw[nz])
        grad_v[nz] -= v[nz] * coef[:, None]

    proj64 = params.projection.astype(np.float64)
    grad_pooled = grad_v @ proj64.T
    grad_proj = cache.pooled.T @ grad_v

    grad_table = np.zeros(params.embedding_table.shape, dtype=np.float64)
    for b, ids in enumerate(cache.token_ids):
        np.add.at(grad_table, np.asarray(ids, dtype=np.intp), grad_pooled[b] / len(ids))
    return ParamGrads(grad_table, grad_proj)


@dataclass
class OptimizerState:
    m_table: np.ndarray
    m_projection: np.ndarray
    v_table: np.ndarray
    v_projection: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m_table=np.zeros_like(params.embedding_table),
            m_projection=np.zeros_like(params.projection),
            v_table=np.zeros_like(params.embedding_table),
            v_projection=np.zeros_like(params.projection),
        )


def adam_step(
    params: ModelParams, state: OptimizerState, grads: ParamGrads, lr: float
) -> tuple[ModelParams, OptimizerState]:
    """One in-place Adam update with bias correction.

    Moments and parameters are float32 and updated with in-place
    vectorized ops; the full-table update dominates a training step,
    so no float64 round trip is taken here.
    """
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in (("embedding_table", grads.embedding_table), ("projection", grads.projection)):
        bad = ~np.isfinite(g)
        if bad.any():
            raise NonFiniteGradientError(
                f"{int(bad.sum())} non-finite entries in the {name} gradient"
            )
    state.step += 1
    t = state.step
    # python-float scalars keep the float32 dtype of the arrays
    b1, b2 = state.beta1, state.beta2
    step_size = lr / (1.0 - b1**t)
    c2 = 1.0 - b2**t
    updates = (
        (params.embedding_table, state.m_table, state.v_table, grads.embedding_table),
        (params.projection, state.m_projection, state.v_projection, grads.projection),
    )
    for p, m, v, g in updates:
        g32 = np.asarray(g, dtype=np.float32)
        if g32 is g:
            g32 = g32.copy()  # squared in place below
        m *= b1
        m += (1.0 - b1) * g32
        np.square(g32, out=g32)
        v *= b2
        v += (1.0 - b2) * g32
        denom = np.sqrt(v / c2)
        denom += state.eps
        denom /= step_size  # fold the scalar so p -= m / denom
        p -= m / denom
    return params, state


def _array_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(params: ModelParams, state: OptimizerState, path: str) -> None:
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIII",
        CHECKPOINT_VERSION,
        params.hash_bits,
        params.dim,
        state.step,
    )
    body = b"".join(
        _array_bytes(a)
        for a in (
            params.embedding_table,
            params.projection,
            state.m_table,
            state.m_projection,
            state.v_table,
            state.v_projection,
        )
    )
    blob = header + body
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def load_checkpoint(path: str) -> tuple[ModelParams, OptimizerState]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not a checkpoint file")
    header_size = 4 + struct.calcsize("<IIII")
    if len(blob) < header_size + 4:
        raise CheckpointChecksumError(f"{path}: truncated checkpoint")
    version, hash_bits, dim, step = struct.unpack("<IIII", blob[4:header_size])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}"
        )
    rows = 1 << hash_bits
    table_n = rows * dim
    proj_n = dim * dim
    expected = header_size + 4 * (2 * table_n + 2 * proj_n + table_n + proj_n) + 4
    if len(blob) != expected:
        raise CheckpointChecksumError(
            f"{path}: size {len(blob)} does not match the declared shapes ({expected})"
        )
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointChecksumError(f"{path}: checksum mismatch")

    offset = header_size

    def take(n: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        a = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        offset += 4 * n
        return a

    table = take(table_n, (rows, dim))
    proj = take(proj_n, (dim, dim))
    m_table = take(table_n, (rows, dim))
    m_proj = take(proj_n, (dim, dim))
    v_table = take(table_n, (rows, dim))
    v_proj = take(proj_n, (dim, dim))
    params = ModelParams(table, proj, hash_bits=hash_bits, dim=dim)
    state = OptimizerState(m_table, m_proj, v_table, v_proj, step=step)
    return params, state
