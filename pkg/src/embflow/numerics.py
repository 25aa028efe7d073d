"""Vector primitives, int8 quantization, and ranking metrics.

All operations are pure and safe for concurrent callers. Embeddings are
stored as float64 internally; serialized forms narrow to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, UndefinedMetricError, ZeroVectorError

NORM_TOL = 1e-6

# recall_at_k modes
TOP_K_PRECISION = "top-k-precision"
HIT_RECALL = "hit-recall"


@dataclass(frozen=True)
class Embedding:
    """Fixed-dimension real vector, optionally flagged as unit-norm."""

    dim: int
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.shape[0] != self.dim or self.dim <= 0:
            raise ContractViolation(f"expected {self.dim} components, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("embedding has non-finite components")
        object.__setattr__(self, "values", vals)
        if self.normalized:
            norm = float(np.linalg.norm(vals))
            if abs(norm - 1.0) > NORM_TOL:
                raise ContractViolation(f"normalized flag set but ||v|| = {norm!r}")

    @classmethod
    def of(cls, values: Iterable[float], normalized: bool = False) -> "Embedding":
        vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                          dtype=np.float64)
        return cls(dim=int(vals.shape[0]), values=vals, normalized=normalized)

    @classmethod
    def unit(cls, values: Iterable[float]) -> "Embedding":
        """Normalize `values` to unit length and flag the result."""
        vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                          dtype=np.float64)
        norm = float(np.linalg.norm(vals))
        if norm == 0.0:
            raise ZeroVectorError("cannot normalize the zero vector")
        return cls(dim=int(vals.shape[0]), values=vals / norm, normalized=True)


@dataclass(frozen=True)
class QuantizedEmbedding:
    """Symmetric per-vector int8 encoding: value_i = codes_i * scale."""

    dim: int
    scale: float
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int8)
        if codes.ndim != 1 or codes.shape[0] != self.dim or self.dim <= 0:
            raise ContractViolation(f"expected {self.dim} codes, got shape {codes.shape}")
        if np.any(codes < -127) or np.any(codes > 127):
            raise ContractViolation("codes outside [-127, 127]")
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ContractViolation(f"scale must be a positive real, got {self.scale!r}")
        object.__setattr__(self, "codes", codes)


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    support: int

    def __post_init__(self):
        if self.support < 1:
            raise UndefinedMetricError(f"{self.name}: support must be >= 1")
        if not np.isfinite(self.value):
            raise UndefinedMetricError(f"{self.name}: non-finite value")


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between two non-zero vectors, clipped to [-1, 1]."""
    if a.dim != b.dim:
        raise ContractViolation(f"dimension mismatch: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity undefined for the zero vector")
    return float(np.clip(np.dot(a.values, b.values) / (na * nb), -1.0, 1.0))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round is half-to-even; the quantizer wants symmetric rounding.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(e: Embedding) -> QuantizedEmbedding:
    """Symmetric int8 quantization with scale = max|x| / 127 (1.0 for the zero vector)."""
    peak = float(np.max(np.abs(e.values))) if e.dim else 0.0
    if peak == 0.0:
        return QuantizedEmbedding(dim=e.dim, scale=1.0,
                                  codes=np.zeros(e.dim, dtype=np.int8))
    scale = peak / 127.0
    codes = _round_half_away(e.values / scale)
    codes = np.clip(codes, -127, 127).astype(np.int8)
    return QuantizedEmbedding(dim=e.dim, scale=scale, codes=codes)


def dequantize(q: QuantizedEmbedding) -> Embedding:
    return Embedding(dim=q.dim, values=q.codes.astype(np.float64) * q.scale)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with average ranks, so ties contribute 0.5 per pair."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractViolation("scores and labels must be equal-length 1-d sequences")
    if not np.all(np.isfinite(s)):
        raise ContractViolation("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ContractViolation("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    first_rank = np.concatenate(([0], np.cumsum(counts)))[:-1]
    avg_ranks = first_rank + (counts + 1) / 2.0  # 1-based average rank per tied group
    ranks = avg_ranks[inverse]
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def recall_at_k(
    rankings: Mapping[object, Sequence[object]],
    relevance: Mapping[object, set],
    k: int,
    mode: str = TOP_K_PRECISION,
) -> MetricReport:
    """Mean top-k relevance over queries.

    `top-k-precision` divides the relevant-in-top-k count by k (short lists are
    treated as padded with misses); `hit-recall` divides by the size of the
    query's relevant set. Queries with an empty relevant set are skipped and
    the support decremented.
    """
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    if mode not in (TOP_K_PRECISION, HIT_RECALL):
        raise ContractViolation(f"unknown mode {mode!r}")
    total = 0.0
    support = 0
    for qid, ranked in rankings.items():
        relevant = relevance.get(qid, set())
        if not relevant:
            continue
        hits = len(set(ranked[:k]) & relevant)
        total += hits / k if mode == TOP_K_PRECISION else hits / len(relevant)
        support += 1
    if support == 0:
        raise UndefinedMetricError("no query had a non-empty relevant set")
    name = f"Recall@{k}" if mode == TOP_K_PRECISION else f"HitRecall@{k}"
    return MetricReport(name=name, value=total / support, support=support)
