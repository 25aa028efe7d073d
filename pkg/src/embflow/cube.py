"""Content-based behavior-sequence features for a toy CTR head.

For a target (and for the query) we score every item of the user's behavior
sequence by cosine similarity in the learned embedding space, remap the
scores with a per-head scalar affine (weight a, bias c), softmax the mapped
scores over positions, and use the resulting weights to pool both the ID
embeddings and the multimodal embeddings of the sequence. The pooled
features, raw embeddings, pairwise similarities, and presence flags feed a
single affine+logistic CTR head.

The softmax bias c cancels analytically in the weight normalization, so the
implementation never adds it to the logits: weights are bitwise identical
for c and c+10, and its gradient is exactly zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .errors import ConfigError, ContractViolation
from .numerics import Embedding, auc as auc_metric

D_ID_DEFAULT = 16


@dataclass(frozen=True)
class BehaviorSequence:
    """Time-ordered interacted items with ID and multimodal embeddings.

    `mm_present[b]` is False when the store had no vector for that position;
    such positions carry a zero vector and similarity 0.
    """

    item_ids: tuple[int, ...]
    id_embeddings: np.ndarray   # (L, d_id)
    mm_embeddings: np.ndarray   # (L, d_mm)
    mm_present: np.ndarray      # (L,) bool
    timestamps: tuple[int, ...]

    def __post_init__(self):
        n = len(self.item_ids)
        if self.id_embeddings.shape[0] != n or self.mm_embeddings.shape[0] != n \
                or self.mm_present.shape[0] != n or len(self.timestamps) != n:
            raise ContractViolation("behavior sequence arrays disagree on length")
        if any(t2 < t1 for t1, t2 in zip(self.timestamps, self.timestamps[1:])):
            raise ContractViolation("behavior sequence must be time-ordered")

    def __len__(self) -> int:
        return len(self.item_ids)

    @classmethod
    def empty(cls, d_id: int, d_mm: int) -> "BehaviorSequence":
        return cls(item_ids=(), id_embeddings=np.zeros((0, d_id)),
                   mm_embeddings=np.zeros((0, d_mm)),
                   mm_present=np.zeros(0, dtype=bool), timestamps=())


@dataclass
class FusionHead:
    """Scalar affine remap of a similarity score: mapped = a * s + c."""

    a: float = 4.0
    c: float = -3.0


@dataclass
class CubeParams:
    item_head: FusionHead
    query_head: FusionHead
    w: np.ndarray
    b: float
    d_id: int
    d_mm: int

    @classmethod
    def init(cls, d_id: int = D_ID_DEFAULT, d_mm: int = 128) -> "CubeParams":
        return cls(item_head=FusionHead(), query_head=FusionHead(),
                   w=np.zeros(feature_count(d_id, d_mm)), b=0.0, d_id=d_id, d_mm=d_mm)

    def copy(self) -> "CubeParams":
        return CubeParams(item_head=replace(self.item_head), query_head=replace(self.query_head),
                          w=self.w.copy(), b=self.b, d_id=self.d_id, d_mm=self.d_mm)


@dataclass(frozen=True)
class CtrExample:
    example_id: int
    query_id: int
    target_product_id: int
    query_embedding: np.ndarray        # multimodal query vector (d_mm)
    target_id_embedding: np.ndarray    # (d_id)
    target_mm_embedding: np.ndarray    # (d_mm); zeros when absent
    target_mm_present: bool
    item_seq: BehaviorSequence
    query_seq: BehaviorSequence
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractViolation("label must be 0 or 1")


def feature_count(d_id: int, d_mm: int) -> int:
    # fused id + fused mm per head, target id/mm, query mm, 5 sims, 5 flags
    return 3 * d_id + 4 * d_mm + 10


_KIND_CODES = {"product": 1, "query": 2}
_ID_CACHE: dict[tuple, np.ndarray] = {}


def id_embedding(kind: str, ident: int, d_id: int = D_ID_DEFAULT, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-random ID embedding (stand-in for a learned table).
    Stable across processes; treat the returned array as read-only."""
    key = (kind, int(ident), d_id, seed)
    cached = _ID_CACHE.get(key)
    if cached is None:
        seq = np.random.SeedSequence(entropy=seed, spawn_key=(_KIND_CODES[kind], int(ident)))
        cached = np.random.default_rng(seq).normal(size=d_id) / np.sqrt(d_id)
        _ID_CACHE[key] = cached
    return cached


def similarity_sequence(target, seq: BehaviorSequence) -> np.ndarray:
    """Per-position cosine similarity between the target and the sequence's
    multimodal embeddings; positions with a missing vector score 0."""
    t = target.values if isinstance(target, Embedding) else np.asarray(target, np.float64)
    if len(seq) == 0:
        return np.zeros(0)
    if seq.mm_embeddings.shape[1] != t.shape[0]:
        raise ContractViolation(
            f"dim mismatch: target {t.shape[0]} vs sequence {seq.mm_embeddings.shape[1]}")
    t_norm = float(np.linalg.norm(t))
    if t_norm == 0.0:
        raise ContractViolation("target embedding is the zero vector")
    norms = np.linalg.norm(seq.mm_embeddings, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sims = (seq.mm_embeddings @ t) / (safe * t_norm)
    sims = np.where(seq.mm_present & (norms > 0), sims, 0.0)
    return np.clip(sims, -1.0, 1.0)


def remap(head: FusionHead, s: np.ndarray) -> np.ndarray:
    """The affine-mapped similarity scores (reporting/diagnostic view)."""
    return head.a * np.asarray(s, np.float64) + head.c


@dataclass(frozen=True)
class FuseResult:
    vector: np.ndarray
    weights: np.ndarray | None
    empty: bool


def fusion_weights(head: FusionHead, s: np.ndarray) -> np.ndarray:
    """softmax(a*s + c) over positions; c shifts every logit equally and is
    cancelled analytically, which makes bias-shift invariance exact."""
    u = head.a * np.asarray(s, np.float64)
    u = u - u.max()
    e = np.exp(u)
    return e / e.sum()


def fuse(s: np.ndarray, vectors: np.ndarray, head: FusionHead) -> FuseResult:
    """Softmax-weighted pooling of `vectors` ((L, d)) by mapped similarities."""
    s = np.asarray(s, np.float64)
    if s.shape[0] != vectors.shape[0]:
        raise ContractViolation("similarity and vector sequences must have equal length")
    if s.shape[0] == 0:
        return FuseResult(vector=np.zeros(vectors.shape[1]), weights=None, empty=True)
    w = fusion_weights(head, s)
    return FuseResult(vector=w @ vectors, weights=w, empty=False)


def _safe_cos(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def _d_cos_dv(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient of cos(u, v) with respect to v (zero at degenerate points)."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return np.zeros_like(v)
    cos = float(np.dot(u, v) / (nu * nv))
    return (u / nu - cos * (v / nv)) / nv


def _forward(params: CubeParams, ex: CtrExample, use_multimodal: bool):
    d_id, d_mm = params.d_id, params.d_mm
    zero_mm = np.zeros(d_mm)

    if use_multimodal:
        s_item = similarity_sequence(ex.target_mm_embedding, ex.item_seq) \
            if ex.target_mm_present and len(ex.item_seq) else np.zeros(len(ex.item_seq))
        s_query = similarity_sequence(ex.query_embedding, ex.query_seq) \
            if len(ex.query_seq) else np.zeros(0)
    else:
        s_item = np.zeros(len(ex.item_seq))
        s_query = np.zeros(len(ex.query_seq))

    f_item_id = fuse(s_item, ex.item_seq.id_embeddings, params.item_head)
    f_item_mm = fuse(s_item, ex.item_seq.mm_embeddings, params.item_head)
    f_query_id = fuse(s_query, ex.query_seq.id_embeddings, params.query_head)
    f_query_mm = fuse(s_query, ex.query_seq.mm_embeddings, params.query_head)

    if use_multimodal:
        q_mm = ex.query_embedding
        t_mm = ex.target_mm_embedding if ex.target_mm_present else zero_mm
        r_item = f_item_mm.vector
        r_query = f_query_mm.vector
        sims = np.array([
            _safe_cos(q_mm, r_item),
            _safe_cos(q_mm, r_query),
            _safe_cos(t_mm, r_item),
            _safe_cos(t_mm, r_query),
            _safe_cos(q_mm, t_mm),
        ])
        flags = np.array([
            0.0 if f_item_id.empty else 1.0,
            0.0 if f_query_id.empty else 1.0,
            1.0 if ex.target_mm_present else 0.0,
            float(ex.item_seq.mm_present.mean()) if len(ex.item_seq) else 0.0,
            float(ex.query_seq.mm_present.mean()) if len(ex.query_seq) else 0.0,
        ])
    else:
        q_mm = zero_mm
        t_mm = zero_mm
        r_item = zero_mm
        r_query = zero_mm
        sims = np.zeros(5)
        flags = np.array([0.0 if f_item_id.empty else 1.0,
                          0.0 if f_query_id.empty else 1.0, 0.0, 0.0, 0.0])

    x = np.concatenate([
        f_item_id.vector, r_item, f_query_id.vector, r_query,
        ex.target_id_embedding, t_mm, q_mm, sims, flags,
    ])
    logit = float(np.dot(params.w, x) + params.b)
    p = float(1.0 / (1.0 + np.exp(-logit))) if logit >= 0 else \
        float(np.exp(logit) / (1.0 + np.exp(logit)))
    cache = {
        "x": x, "p": p, "s_item": s_item, "s_query": s_query,
        "f_item_id": f_item_id, "f_item_mm": f_item_mm,
        "f_query_id": f_query_id, "f_query_mm": f_query_mm,
        "q_mm": q_mm, "t_mm": t_mm, "use_mm": use_multimodal,
    }
    return p, cache


def predict_ctr(params: CubeParams, ex: CtrExample, use_multimodal: bool = True) -> float:
    """Click probability in (0, 1); 0.5 exactly when w and b are all zero."""
    p, _ = _forward(params, ex, use_multimodal)
    return p


def _head_grad(d_fused_id: np.ndarray, d_fused_mm: np.ndarray, s: np.ndarray,
               f_id: FuseResult, f_mm: FuseResult,
               id_vectors: np.ndarray, mm_vectors: np.ndarray) -> float:
    """d loss / d a for one fusion head (c's gradient is identically zero)."""
    if f_id.empty or f_id.weights is None:
        return 0.0
    w = f_id.weights
    g = id_vectors @ d_fused_id + mm_vectors @ d_fused_mm  # dL/dw_b
    du = w * (g - float(np.dot(w, g)))
    return float(np.dot(du, s))


@dataclass(frozen=True)
class CubeGrads:
    w: np.ndarray
    b: float
    a_item: float
    c_item: float
    a_query: float
    c_query: float


def loss_and_grads(params: CubeParams, ex: CtrExample, use_multimodal: bool = True
                   ) -> tuple[float, CubeGrads]:
    """Log-loss of one example with exact analytic parameter gradients."""
    p, cache = _forward(params, ex, use_multimodal)
    y = ex.label
    eps = 1e-12
    loss = -(y * np.log(max(p, eps)) + (1 - y) * np.log(max(1.0 - p, eps)))
    g_logit = p - y
    d_w = g_logit * cache["x"]
    d_b = g_logit
    d_x = g_logit * params.w

    d_id, d_mm = params.d_id, params.d_mm
    o = 0
    d_e_item = d_x[o:o + d_id]; o += d_id
    d_r_item = d_x[o:o + d_mm].copy(); o += d_mm
    d_e_query = d_x[o:o + d_id]; o += d_id
    d_r_query = d_x[o:o + d_mm].copy(); o += d_mm
    o += d_id + d_mm + d_mm  # target id, target mm, query mm: inputs, not params
    d_sims = d_x[o:o + 5]

    a_item = a_query = 0.0
    if use_multimodal:
        # similarity features pull on the fused multimodal vectors
        q_mm, t_mm = cache["q_mm"], cache["t_mm"]
        r_item = cache["f_item_mm"].vector
        r_query = cache["f_query_mm"].vector
        d_r_item += d_sims[0] * _d_cos_dv(q_mm, r_item) + d_sims[2] * _d_cos_dv(t_mm, r_item)
        d_r_query += d_sims[1] * _d_cos_dv(q_mm, r_query) + d_sims[3] * _d_cos_dv(t_mm, r_query)
        a_item = _head_grad(d_e_item, d_r_item, cache["s_item"],
                            cache["f_item_id"], cache["f_item_mm"],
                            ex.item_seq.id_embeddings, ex.item_seq.mm_embeddings)
        a_query = _head_grad(d_e_query, d_r_query, cache["s_query"],
                             cache["f_query_id"], cache["f_query_mm"],
                             ex.query_seq.id_embeddings, ex.query_seq.mm_embeddings)

    return float(loss), CubeGrads(w=d_w, b=float(d_b), a_item=a_item, c_item=0.0,
                                  a_query=a_query, c_query=0.0)


@dataclass(frozen=True)
class CtrTrainConfig:
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 0.2
    seed: int = 0
    use_multimodal: bool = True


def train_ctr(params: CubeParams, examples: Sequence[CtrExample],
              config: CtrTrainConfig = CtrTrainConfig()) -> tuple[CubeParams, list[float]]:
    """Mini-batch gradient descent on log-loss; deterministic per seed.
    Returns trained parameters and the mean log-loss per batch."""
    if not examples:
        raise ContractViolation("no CTR examples")
    labels = {ex.label for ex in examples}
    if labels != {0, 1}:
        warnings.warn("degenerate training set: only one class present", stacklevel=2)
    out = params.copy()
    rng = np.random.default_rng(config.seed)
    curve: list[float] = []
    n = len(examples)
    bs = min(config.batch_size, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = [examples[i] for i in order[start:start + bs]]
            total = 0.0
            gw = np.zeros_like(out.w)
            gb = ga_i = ga_q = 0.0
            for ex in batch:
                loss, g = loss_and_grads(out, ex, config.use_multimodal)
                total += loss
                gw += g.w
                gb += g.b
                ga_i += g.a_item
                ga_q += g.a_query
            k = len(batch)
            out.w -= config.learning_rate * gw / k
            out.b -= config.learning_rate * gb / k
            out.item_head.a -= config.learning_rate * ga_i / k
            out.query_head.a -= config.learning_rate * ga_q / k
            curve.append(total / k)
    return out, curve


def evaluate_auc(params: CubeParams, examples: Sequence[CtrExample],
                 use_multimodal: bool = True) -> float:
    scores = [predict_ctr(params, ex, use_multimodal) for ex in examples]
    labels = [ex.label for ex in examples]
    return auc_metric(scores, labels)


# ---------------------------------------------------------------------------
# synthetic CTR examples: click is category match (plus noise)

@dataclass(frozen=True)
class CtrDataConfig:
    n_users: int = 200
    events_per_user: int = 20
    seq_len: int = 100
    query_seq_len: int = 8
    d_id: int = D_ID_DEFAULT
    label_noise: float = 0.02
    seed: int = 0


def build_examples(corpus: Corpus,
                   product_vectors: Mapping[int, np.ndarray],
                   query_vectors: Mapping[int, np.ndarray],
                   cfg: CtrDataConfig = CtrDataConfig()) -> list[CtrExample]:
    """Simulated users with one preferred category each. Their behavior
    sequences draw (popularity-weighted) from the preferred category, and the
    click label is 1 exactly when the target matches the preference, flipped
    with probability `label_noise`."""
    rng = np.random.default_rng(cfg.seed)
    d_mm = len(next(iter(product_vectors.values())))
    categories = sorted(corpus.by_category)
    queries_by_cat: dict[int, list] = {}
    for q in corpus.queries:
        if q.query_id in query_vectors:
            queries_by_cat.setdefault(q.intent_category, []).append(q)
    pop = {p.product_id: p.popularity for p in corpus.products}

    examples: list[CtrExample] = []
    eid = 0
    for _ in range(cfg.n_users):
        pref = categories[int(rng.integers(0, len(categories)))]
        pids = corpus.by_category[pref]
        weights = np.array([pop[p] for p in pids])
        weights = weights / weights.sum()
        seq_pids = [pids[int(i)] for i in rng.choice(len(pids), size=cfg.seq_len, p=weights)]
        item_seq = behavior_sequence_for_products(seq_pids, product_vectors,
                                                  d_id=cfg.d_id, d_mm=d_mm, seed=cfg.seed)
        pref_queries = queries_by_cat.get(pref, [])
        q_seq_ids = [pref_queries[int(i)].query_id
                     for i in rng.integers(0, len(pref_queries), size=cfg.query_seq_len)] \
            if pref_queries else []
        query_seq = behavior_sequence_for_queries(q_seq_ids, query_vectors,
                                                  d_id=cfg.d_id, d_mm=d_mm, seed=cfg.seed)

        for _ in range(cfg.events_per_user):
            match = bool(rng.random() < 0.5)
            if match:
                cat = pref
            else:
                others = [c for c in categories if c != pref]
                cat = others[int(rng.integers(0, len(others)))]
            tp = corpus.by_category[cat]
            target = tp[int(rng.integers(0, len(tp)))]
            label = int(match)
            if rng.random() < cfg.label_noise:
                label = 1 - label
            q_pool = pref_queries or corpus.queries
            query = q_pool[int(rng.integers(0, len(q_pool)))]
            q_vec = query_vectors.get(query.query_id, np.zeros(d_mm))
            t_vec = product_vectors.get(target)
            examples.append(CtrExample(
                example_id=eid,
                query_id=query.query_id,
                target_product_id=target,
                query_embedding=np.asarray(q_vec, np.float64),
                target_id_embedding=id_embedding("product", target, cfg.d_id, cfg.seed),
                target_mm_embedding=np.asarray(t_vec, np.float64) if t_vec is not None else np.zeros(d_mm),
                target_mm_present=t_vec is not None,
                item_seq=item_seq,
                query_seq=query_seq,
                label=label,
            ))
            eid += 1
    return examples


def behavior_sequence_for_products(pids: Sequence[int],
                                   product_vectors: Mapping[int, np.ndarray],
                                   d_id: int, d_mm: int, seed: int) -> BehaviorSequence:
    if not pids:
        return BehaviorSequence.empty(d_id, d_mm)
    id_emb = np.stack([id_embedding("product", p, d_id, seed) for p in pids])
    mm = np.zeros((len(pids), d_mm))
    present = np.zeros(len(pids), dtype=bool)
    for i, p in enumerate(pids):
        vec = product_vectors.get(p)
        if vec is not None:
            mm[i] = vec
            present[i] = True
    return BehaviorSequence(item_ids=tuple(pids), id_embeddings=id_emb,
                            mm_embeddings=mm, mm_present=present,
                            timestamps=tuple(range(len(pids))))


def behavior_sequence_for_queries(qids: Sequence[int],
                                  query_vectors: Mapping[int, np.ndarray],
                                  d_id: int, d_mm: int, seed: int) -> BehaviorSequence:
    if not qids:
        return BehaviorSequence.empty(d_id, d_mm)
    id_emb = np.stack([id_embedding("query", q, d_id, seed) for q in qids])
    mm = np.zeros((len(qids), d_mm))
    present = np.zeros(len(qids), dtype=bool)
    for i, q in enumerate(qids):
        vec = query_vectors.get(q)
        if vec is not None:
            mm[i] = vec
            present[i] = True
    return BehaviorSequence(item_ids=tuple(qids), id_embeddings=id_emb,
                            mm_embeddings=mm, mm_present=present,
                            timestamps=tuple(range(len(qids))))


# ---------------------------------------------------------------------------
# persistence

def save_examples(examples: Sequence[CtrExample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "example_id": ex.example_id,
                "query_id": ex.query_id,
                "target_product_id": ex.target_product_id,
                "item_seq": list(ex.item_seq.item_ids),
                "query_seq": list(ex.query_seq.item_ids),
                "label": ex.label,
            }, separators=(",", ":")) + "\n")


def load_examples(path: str | Path,
                  product_vectors: Mapping[int, np.ndarray],
                  query_vectors: Mapping[int, np.ndarray],
                  d_id: int = D_ID_DEFAULT, seed: int = 0) -> list[CtrExample]:
    d_mm = len(next(iter(product_vectors.values())))
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            t_vec = product_vectors.get(rec["target_product_id"])
            q_vec = query_vectors.get(rec["query_id"], np.zeros(d_mm))
            out.append(CtrExample(
                example_id=rec["example_id"],
                query_id=rec["query_id"],
                target_product_id=rec["target_product_id"],
                query_embedding=np.asarray(q_vec, np.float64),
                target_id_embedding=id_embedding("product", rec["target_product_id"], d_id, seed),
                target_mm_embedding=np.asarray(t_vec, np.float64) if t_vec is not None else np.zeros(d_mm),
                target_mm_present=t_vec is not None,
                item_seq=behavior_sequence_for_products(rec["item_seq"], product_vectors,
                                                        d_id, d_mm, seed),
                query_seq=behavior_sequence_for_queries(rec["query_seq"], query_vectors,
                                                        d_id, d_mm, seed),
                label=rec["label"],
            ))
    return out


def save_predictions(rows: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("example_id,probability\n")
        for eid, p in rows:
            fh.write(f"{eid},{p!r}\n")
