"""Contrastive post-training with exact negative accounting.

Stage "infonce" contrasts each query against the positives of the whole
global batch; stage "circle" adds per-sample same-category hard negatives.
In both stages the pool is enlarged spatially (items from all simulated
shards of the global batch) and temporally (a FIFO queue of the item
embeddings from the last k global batches, held as constants). With every
hard negative present and the queue full, each query sees exactly
2*B*P*(k+1) - 1 negatives.

Losses are summed over the configured nested-view dimensions; gradients are
exact analytic and flow only through the current batch, never the queue.
The optimizer is plain gradient descent, which keeps runs bit-reproducible.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import Corpus
from .curation import TrainingTriplet
from .encoder import (EncoderDims, EncoderGrads, EncoderInput, EncoderParams, MrlConfig,
                      backward, forward_cached, renorm_prefix, renorm_prefix_backward)
from .errors import ConfigError, ContractViolation, DivergenceError
from .numerics import Embedding

STAGE_INFONCE = "infonce"
STAGE_CIRCLE = "circle"

ROLE_POSITIVE = "positive"
ROLE_HARD = "hard"


class SampleTag(NamedTuple):
    shard: int
    step: int
    sample: int
    role: str


@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 8          # B, samples per shard
    shards: int = 4              # P, simulated shard count
    queue_depth: int = 5         # k, past global batches kept as negatives
    tau: float = 0.05
    stage: str = STAGE_INFONCE
    mrl: MrlConfig = field(default_factory=MrlConfig)
    steps: int = 500
    learning_rate: float = 0.05
    seed: int = 0
    verify_counts: bool = False  # enumerate the pool tags every step and assert

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.shards < 1:
            raise ConfigError("shards must be >= 1")
        if self.queue_depth < 0:
            raise ConfigError("queue_depth must be >= 0")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.stage not in (STAGE_INFONCE, STAGE_CIRCLE):
            raise ConfigError(f"unknown stage {self.stage!r}")

    @property
    def global_batch(self) -> int:
        return self.batch_size * self.shards


@dataclass(frozen=True)
class LossReport:
    step: int
    loss: float
    grad_norm: float
    negatives_used: int
    pos_sim_mean: float
    hard_sim_mean: float

    def __post_init__(self):
        for name in ("loss", "grad_norm", "pos_sim_mean", "hard_sim_mean"):
            if not np.isfinite(getattr(self, name)):
                raise ContractViolation(f"LossReport.{name} is not finite")


class NegativePool:
    """Fresh items of the current global batch plus a FIFO queue of the item
    embeddings from the past `queue_depth` global batches (constants)."""

    def __init__(self, queue_depth: int):
        self.queue_depth = queue_depth
        self._stale: deque = deque(maxlen=queue_depth if queue_depth > 0 else 0)
        self._fresh_items: np.ndarray | None = None
        self._fresh_tags: list[SampleTag] = []

    def set_fresh(self, items: np.ndarray | None, tags: Sequence[SampleTag]) -> None:
        self._fresh_items = items
        self._fresh_tags = list(tags)

    def retire_fresh(self) -> None:
        """Move the current batch's items into the queue (evicting beyond k)."""
        if self.queue_depth > 0 and self._fresh_tags:
            self._stale.append((self._fresh_items, self._fresh_tags))
        self._fresh_items = None
        self._fresh_tags = []

    @property
    def fresh_tags(self) -> list[SampleTag]:
        return self._fresh_tags

    def stale_matrix(self, dim: int) -> np.ndarray:
        mats = [items for items, _ in self._stale if items is not None]
        if not mats:
            return np.zeros((0, dim))
        return np.concatenate(mats, axis=0)

    def stale_tags(self) -> list[SampleTag]:
        out: list[SampleTag] = []
        for _, tags in self._stale:
            out.extend(tags)
        return out

    def stale_count(self) -> int:
        return sum(len(tags) for _, tags in self._stale)

    def negative_tags_for(self, own_sample: int) -> list[SampleTag]:
        """Enumerate every negative available to one query: all fresh items
        except its own positive (its own hard negative stays), plus the full
        queue."""
        tags = [t for t in self._fresh_tags
                if not (t.role == ROLE_POSITIVE and t.sample == own_sample)]
        tags.extend(self.stale_tags())
        return tags


def synthetic_batch_tags(batch_size: int, shards: int, step: int,
                         missing_hards: Sequence[int] = ()) -> list[SampleTag]:
    """Provenance tags for one full global batch without any training."""
    n = batch_size * shards
    missing = set(missing_hards)
    tags = [SampleTag(shard=i // batch_size, step=step, sample=i, role=ROLE_POSITIVE)
            for i in range(n)]
    tags += [SampleTag(shard=i // batch_size, step=step, sample=i, role=ROLE_HARD)
             for i in range(n) if i not in missing]
    return tags


def enumerate_pool_sizes(batch_size: int, shards: int, queue_depth: int,
                         samples: Sequence[int] | None = None,
                         missing_hards: Sequence[int] = ()) -> list[int]:
    """Fill a pool with `queue_depth` retired full batches plus one fresh
    batch of synthetic tags, then count the negatives each query can see."""
    pool = NegativePool(queue_depth)
    for step in range(queue_depth):
        pool.set_fresh(None, synthetic_batch_tags(batch_size, shards, step, missing_hards))
        pool.retire_fresh()
    pool.set_fresh(None, synthetic_batch_tags(batch_size, shards, queue_depth, missing_hards))
    n = batch_size * shards
    which = range(n) if samples is None else samples
    return [len(pool.negative_tags_for(s)) for s in which]


# ---------------------------------------------------------------------------
# losses with exact analytic gradients

def _as_array(v) -> np.ndarray:
    return v.values if isinstance(v, Embedding) else np.asarray(v, dtype=np.float64)


def _check_unit(name: str, v: np.ndarray) -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-3:
        raise ContractViolation(f"{name} must be unit-norm, got ||v|| = {norm!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def infonce_loss(r_q, r_p, negatives: Sequence, tau: float):
    """Temperature-scaled softmax contrast of one positive against a negative
    set. Returns (loss, {"query": g, "positive": g, "negatives": [g...]}).

    An empty negative set gives loss 0 exactly (the softmax collapses to the
    positive term alone).
    """
    if not tau > 0:
        raise ContractViolation("tau must be positive")
    q = _as_array(r_q)
    p = _as_array(r_p)
    negs = [_as_array(n) for n in negatives]
    if p.shape != q.shape or any(n.shape != q.shape for n in negs):
        raise ContractViolation("all embeddings must share one dimension")
    _check_unit("r_q", q)
    _check_unit("r_p", p)

    sp = float(np.dot(q, p))
    grads = {"query": np.zeros_like(q), "positive": np.zeros_like(p),
             "negatives": [np.zeros_like(n) for n in negs]}
    if not negs:
        return 0.0, grads
    sn = np.array([float(np.dot(q, n)) for n in negs])
    z = np.concatenate(([sp], sn)) / tau
    m = float(z.max())
    exp_z = np.exp(z - m)
    lse = m + float(np.log(exp_z.sum()))
    loss = lse - z[0]
    prob = exp_z / exp_z.sum()
    d_sp = (prob[0] - 1.0) / tau
    d_sn = prob[1:] / tau
    grads["query"] = d_sp * p + sum(c * n for c, n in zip(d_sn, negs))
    grads["positive"] = d_sp * q
    grads["negatives"] = [c * q for c in d_sn]
    return float(loss), grads


def circle_loss(r_q, r_p, hard=None, extra_negatives: Sequence = (), tau: float = 1.0):
    """Softplus pair losses: push the positive similarity up and every
    negative similarity (the hard negative plus the extra pool) down."""
    if not tau > 0:
        raise ContractViolation("tau must be positive")
    q = _as_array(r_q)
    p = _as_array(r_p)
    negs = ([] if hard is None else [_as_array(hard)]) + [_as_array(n) for n in extra_negatives]
    if p.shape != q.shape or any(n.shape != q.shape for n in negs):
        raise ContractViolation("all embeddings must share one dimension")
    _check_unit("r_q", q)
    _check_unit("r_p", p)

    sp = float(np.dot(q, p))
    loss = float(np.logaddexp(0.0, -sp / tau))
    d_sp = -float(_sigmoid(np.array([-sp / tau]))[0]) / tau
    grad_q = d_sp * p
    grad_p = d_sp * q
    neg_grads = []
    for n in negs:
        sn = float(np.dot(q, n))
        loss += float(np.logaddexp(0.0, sn / tau))
        d_sn = float(_sigmoid(np.array([sn / tau]))[0]) / tau
        grad_q = grad_q + d_sn * n
        neg_grads.append(d_sn * q)
    grads = {"query": grad_q, "positive": grad_p}
    if hard is not None:
        grads["hard"] = neg_grads[0]
        grads["negatives"] = neg_grads[1:]
    else:
        grads["hard"] = None
        grads["negatives"] = neg_grads
    return loss, grads


# ---------------------------------------------------------------------------
# batched training

@dataclass
class PreparedBatch:
    queries: list[EncoderInput]
    positives: list[EncoderInput]
    hards: list[EncoderInput | None]


def product_input(corpus: Corpus, product_id: int,
                  sku_ids: Sequence[int] | None = None) -> EncoderInput:
    product = corpus.products_by_id[product_id]
    if sku_ids is None:
        feats = np.stack(product.image_features)
    else:
        feats = np.stack([product.image_features[product.sku_ids.index(s)] for s in sku_ids])
    return EncoderInput(token_ids=product.title_tokens, image_features=feats)


def query_input(query) -> EncoderInput:
    return EncoderInput(token_ids=query.text_tokens, image_features=query.image_feature)


def prepare_batch(corpus: Corpus, triplets: Sequence[TrainingTriplet],
                  include_hards: bool) -> PreparedBatch:
    queries = [query_input(t.query) for t in triplets]
    positives = [product_input(corpus, t.positive_product_id, t.positive_sku_ids)
                 for t in triplets]
    hards: list[EncoderInput | None] = [None] * len(triplets)
    if include_hards:
        hards = [product_input(corpus, t.hard_negative_product_id)
                 if t.hard_negative_product_id is not None else None
                 for t in triplets]
    return PreparedBatch(queries=queries, positives=positives, hards=hards)


@dataclass
class TrainerState:
    config: TrainerConfig
    params: EncoderParams
    pool: NegativePool
    step: int = 0


def init_state(config: TrainerConfig, params: EncoderParams | None = None,
               dims: EncoderDims | None = None) -> TrainerState:
    p = params.copy() if params is not None else EncoderParams.init(config.seed, dims)
    config.mrl.validate_for(p.dims.d_full)
    return TrainerState(config=config, params=p, pool=NegativePool(config.queue_depth))


def train_step(state: TrainerState, batch: PreparedBatch) -> LossReport:
    """One global-batch update: encode, assemble the negative pool, compute
    the stage loss over all configured view dims, apply one SGD step, then
    retire the batch's items into the queue."""
    cfg = state.config
    n_s = len(batch.queries)
    if n_s != cfg.global_batch:
        raise ContractViolation(f"expected a global batch of {cfg.global_batch}, got {n_s}")
    include_hards = cfg.stage == STAGE_CIRCLE
    step = state.step

    hard_slots = [i for i, h in enumerate(batch.hards) if include_hards and h is not None]
    inputs = list(batch.queries) + list(batch.positives) + [batch.hards[i] for i in hard_slots]
    e_all, cache = forward_cached(state.params, inputs)
    d_full = state.params.dims.d_full

    q_emb = e_all[:n_s]
    pos_emb = e_all[n_s:2 * n_s]
    hard_emb = e_all[2 * n_s:]

    fresh = np.concatenate([pos_emb, hard_emb], axis=0) if len(hard_emb) else pos_emb
    b = cfg.batch_size
    tags = [SampleTag(shard=i // b, step=step, sample=i, role=ROLE_POSITIVE) for i in range(n_s)]
    tags += [SampleTag(shard=i // b, step=step, sample=i, role=ROLE_HARD) for i in hard_slots]
    state.pool.set_fresh(fresh.copy(), tags)

    stale = state.pool.stale_matrix(d_full)
    cols = np.concatenate([fresh, stale], axis=0)
    n_fresh = fresh.shape[0]
    n_cols = cols.shape[0]
    negatives_per_query = n_cols - 1

    if cfg.verify_counts:
        for i in range(n_s):
            enumerated = len(state.pool.negative_tags_for(i))
            if enumerated != negatives_per_query:
                raise ContractViolation(
                    f"pool enumeration {enumerated} != matrix accounting {negatives_per_query}")

    inv_tau = 1.0 / cfg.tau
    rows = np.arange(n_s)
    total_loss = 0.0
    d_q = np.zeros_like(q_emb)
    d_fresh = np.zeros_like(fresh)

    for m, w in zip(cfg.mrl.dims, cfg.mrl.weights):
        qm, q_norms, q_ok = renorm_prefix(q_emb, m)
        am, a_norms, a_ok = renorm_prefix(cols, m)
        z = (qm @ am.T) * inv_tau
        # a degenerate prefix drops that sample from this view: bad columns
        # contribute nothing, and a row is skipped if its query or its own
        # positive is degenerate
        all_ok = bool(np.all(q_ok)) and bool(np.all(a_ok))
        row_ok = q_ok & a_ok[rows] if not all_ok else None

        if cfg.stage == STAGE_INFONCE:
            if not all_ok:
                z[:, ~a_ok] = -np.inf
            zp = z[rows, rows]
            zmax = z.max(axis=1, keepdims=True)
            exp_z = np.exp(z - zmax)
            denom = exp_z.sum(axis=1, keepdims=True)
            lse = zmax[:, 0] + np.log(denom[:, 0])
            losses = lse - zp
            coef = (exp_z / denom) * inv_tau
            coef[rows, rows] -= inv_tau
        else:
            zp = z[rows, rows]
            softplus = np.logaddexp(0.0, z)
            coef = _sigmoid(z) * inv_tau
            if not all_ok:
                softplus[:, ~a_ok] = 0.0
                coef[:, ~a_ok] = 0.0
            losses = np.logaddexp(0.0, -zp) + softplus.sum(axis=1) - softplus[rows, rows]
            coef[rows, rows] = -_sigmoid(-zp) * inv_tau
        if not all_ok:
            losses = np.where(row_ok, losses, 0.0)
            coef[~row_ok, :] = 0.0
            coef[:, ~a_ok] = 0.0

        scale = w / n_s
        total_loss += scale * float(losses.sum())
        coef *= scale
        d_qm = coef @ am
        d_am = coef.T @ qm
        renorm_prefix_backward(d_qm, qm, q_norms, q_ok, d_q)
        renorm_prefix_backward(d_am[:n_fresh], am[:n_fresh], a_norms[:n_fresh],
                               a_ok[:n_fresh], d_fresh)

    if not np.isfinite(total_loss):
        raise DivergenceError(step, f"non-finite loss at step {step}")

    d_e = np.zeros_like(e_all)
    d_e[:n_s] = d_q
    d_e[n_s:2 * n_s] = d_fresh[:n_s]
    d_e[2 * n_s:] = d_fresh[n_s:]  # hard block keeps hard_slots order

    grads = backward(state.params, cache, d_e)
    grad_norm = grads.norm()
    if not np.isfinite(grad_norm):
        raise DivergenceError(step, f"non-finite gradient at step {step}")
    state.params.apply_update(grads, cfg.learning_rate)
    state.pool.retire_fresh()
    state.step += 1

    pos_sims = np.sum(q_emb * pos_emb, axis=1)
    if hard_slots:
        hard_sims = np.array([float(np.dot(q_emb[i], hard_emb[j]))
                              for j, i in enumerate(hard_slots)])
        hard_mean = float(hard_sims.mean())
    else:
        hard_mean = 0.0
    return LossReport(step=step, loss=total_loss, grad_norm=grad_norm,
                      negatives_used=negatives_per_query,
                      pos_sim_mean=float(pos_sims.mean()), hard_sim_mean=hard_mean)


def train(config: TrainerConfig, triplets: Sequence[TrainingTriplet], corpus: Corpus,
          params_in: EncoderParams | None = None,
          dims: EncoderDims | None = None,
          snapshot_steps: Sequence[int] = ()) -> tuple[EncoderParams, list[LossReport], dict[int, EncoderParams]]:
    """Run `config.steps` updates over shuffled triplets (reshuffled each
    epoch, all from `config.seed`). Returns the final parameters, per-step
    reports, and copies of the parameters at the requested snapshot steps
    (counted as "after N steps")."""
    if not triplets:
        raise ContractViolation("no training triplets")
    state = init_state(config, params_in, dims)
    include_hards = config.stage == STAGE_CIRCLE
    if include_hards:
        with_hard = sum(1 for t in triplets if t.hard_negative_product_id is not None)
        if with_hard < 0.9 * len(triplets):
            warnings.warn(
                f"stage circle: only {with_hard}/{len(triplets)} triplets carry hard negatives",
                stacklevel=2)

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(triplets))
    cursor = 0
    reports: list[LossReport] = []
    snapshots: dict[int, EncoderParams] = {}
    want_snaps = set(snapshot_steps)
    n = config.global_batch
    for _ in range(config.steps):
        if cursor + n > len(order):
            order = rng.permutation(len(triplets))
            cursor = 0
        idx = order[cursor:cursor + n]
        cursor += n
        batch = prepare_batch(corpus, [triplets[i] for i in idx], include_hards)
        reports.append(train_step(state, batch))
        if state.step in want_snaps:
            snapshots[state.step] = state.params.copy()
    return state.params, reports, snapshots


def save_loss_curve(reports: Sequence[LossReport], path) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,grad_norm,negatives_used,pos_sim_mean,hard_sim_mean\n")
        for r in reports:
            fh.write(f"{r.step},{r.loss!r},{r.grad_norm!r},{r.negatives_used},"
                     f"{r.pos_sim_mean!r},{r.hard_sim_mean!r}\n")
