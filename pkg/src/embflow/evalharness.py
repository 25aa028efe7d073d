"""End-to-end evaluation: retrieval recall against corpus ground truth,
downstream CTR AUC, the exchange rate coupling them, and scaling sweeps.

Exchange-rate unit convention (stated in every report header): the rate is
(delta AUC in permille) / (delta metric in percentage points), so +1 pct-pt
of recall buying +0.001 AUC is a rate of 1.0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (Corpus, GenerationConfig, QueryRecord, EVAL_SPLIT, IMAGE,
                     generate_corpus, generate_interactions)
from .cube import (CtrDataConfig, CtrTrainConfig, CubeParams, build_examples,
                   evaluate_auc, train_ctr)
from .curation import CategoryHistogram, EncoderScorer, TrainingTriplet, run_pipeline
from .encoder import EncoderDims, EncoderInput, EncoderParams, MrlConfig, encode_batch, renorm_prefix
from .errors import ConfigError, ContractViolation, DataIntegrityError, UndefinedMetricError
from .numerics import MetricReport, TOP_K_PRECISION, recall_at_k
from .repcenter import VersionedTable
from .trainer import STAGE_CIRCLE, STAGE_INFONCE, TrainerConfig, product_input, query_input, train

EXCHANGE_RATE_CONVENTION = (
    "exchange_rate = (delta_auc * 1000) / (delta_metric_pct); "
    "+1 pct-pt metric for +0.001 AUC = 1.0")

REPORT_KS = (1, 5, 10, 20, 50)


# ---------------------------------------------------------------------------
# retrieval

def embed_queries(params: EncoderParams, queries: Sequence[QueryRecord]) -> np.ndarray:
    return encode_batch(params, [query_input(q) for q in queries])


def embed_products(params: EncoderParams, corpus: Corpus,
                   product_ids: Sequence[int] | None = None) -> tuple[list[int], np.ndarray]:
    pids = list(product_ids) if product_ids is not None else [p.product_id for p in corpus.products]
    vecs = encode_batch(params, [product_input(corpus, pid) for pid in pids])
    return pids, vecs


def product_vector_map(params: EncoderParams, corpus: Corpus,
                       view_dim: int | None = None) -> dict[int, np.ndarray]:
    pids, vecs = embed_products(params, corpus)
    if view_dim is not None:
        vecs, _, ok = renorm_prefix(vecs, view_dim)
        if not np.all(ok):
            raise ContractViolation("degenerate view while exporting product vectors")
    return {pid: vecs[i] for i, pid in enumerate(pids)}


def query_vector_map(params: EncoderParams, corpus: Corpus,
                     split: str | None = None) -> dict[int, np.ndarray]:
    queries = [q for q in corpus.queries if split is None or q.split == split]
    if not queries:
        return {}
    vecs = embed_queries(params, queries)
    return {q.query_id: vecs[i] for i, q in enumerate(queries)}


def retrieve(corpus: Corpus, queries: Sequence[QueryRecord], candidate_ids: Sequence[int],
             k: int, params: EncoderParams, table: VersionedTable | None = None
             ) -> dict[int, list[int]]:
    """Rank candidates per query by descending cosine, ascending-id tie-break.

    Candidate vectors come from `table` when given (the serving path,
    possibly quantized), otherwise from encoding the corpus products with
    `params`. Queries are always embedded with `params`.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if not candidate_ids:
        raise ContractViolation("no candidates")
    pids = np.asarray(list(candidate_ids), dtype=np.int64)
    if table is not None:
        rows = []
        for pid in pids:
            emb = table.get(int(pid))
            if emb is None:
                raise DataIntegrityError(f"candidate {pid} missing from table")
            rows.append(emb.values)
        cand = np.stack(rows)
    else:
        for pid in pids:
            if int(pid) not in corpus.products_by_id:
                raise DataIntegrityError(f"unknown product {pid}")
        _, cand = embed_products(params, corpus, pids.tolist())
    norms = np.linalg.norm(cand, axis=1)
    if np.any(norms == 0):
        raise ContractViolation("zero-norm candidate vector")
    cand = cand / norms[:, None]

    if k > len(pids):
        warnings.warn(f"k={k} exceeds candidate count {len(pids)}; returning full rankings",
                      stacklevel=2)
    q_vecs = embed_queries(params, queries)
    sims = q_vecs @ cand.T
    out: dict[int, list[int]] = {}
    take = min(k, len(pids))
    for i, q in enumerate(queries):
        order = np.lexsort((pids, -sims[i]))
        out[q.query_id] = [int(pids[j]) for j in order[:take]]
    return out


def relevance_sets(corpus: Corpus, queries: Sequence[QueryRecord]) -> dict[int, set[int]]:
    """Ground truth: a query is relevant to every product of its intent category."""
    return {q.query_id: set(corpus.by_category.get(q.intent_category, []))
            for q in queries}


def eval_queries(corpus: Corpus, split: str = EVAL_SPLIT,
                 modality: str | None = IMAGE) -> list[QueryRecord]:
    return [q for q in corpus.queries
            if q.split == split and (modality is None or q.modality == modality)]


def recall_suite(params: EncoderParams, corpus: Corpus,
                 ks: Sequence[int] = REPORT_KS, mode: str = TOP_K_PRECISION,
                 split: str = EVAL_SPLIT, modality: str | None = IMAGE,
                 table: VersionedTable | None = None) -> list[MetricReport]:
    queries = eval_queries(corpus, split, modality)
    if not queries:
        raise ContractViolation(f"no {modality or 'any'}-modality queries in split {split!r}")
    candidates = [p.product_id for p in corpus.products]
    rankings = retrieve(corpus, queries, candidates, max(ks), params, table=table)
    relevance = relevance_sets(corpus, queries)
    return [recall_at_k(rankings, relevance, k, mode) for k in ks]


def format_recall_table(reports: Sequence[MetricReport]) -> str:
    """Two-line layout: metric names, then values in percent."""
    head = "Metric," + ",".join(r.name for r in reports)
    vals = "Value," + ",".join(f"{100.0 * r.value:.1f}%" for r in reports)
    return head + "\n" + vals + "\n"


# ---------------------------------------------------------------------------
# exchange rate

@dataclass(frozen=True)
class ExchangeRateReport:
    baseline_metric_pct: float
    baseline_auc: float
    treatment_metric_pct: float
    treatment_auc: float
    exchange_rate: float

    @property
    def delta_metric_pct(self) -> float:
        return self.treatment_metric_pct - self.baseline_metric_pct

    @property
    def delta_auc(self) -> float:
        return self.treatment_auc - self.baseline_auc


def exchange_rate(baseline: tuple[float, float], treatment: tuple[float, float]
                  ) -> ExchangeRateReport:
    """baseline/treatment are (metric in percent, auc). The rate is permille
    AUC per percentage point of the intermediate metric."""
    b_metric, b_auc = baseline
    t_metric, t_auc = treatment
    for v in (b_metric, b_auc, t_metric, t_auc):
        if not np.isfinite(v):
            raise ContractViolation("non-finite metric value")
    d_metric = t_metric - b_metric
    d_auc = t_auc - b_auc
    if d_metric == 0.0:
        raise UndefinedMetricError("exchange rate undefined for zero intermediate delta")
    return ExchangeRateReport(baseline_metric_pct=b_metric, baseline_auc=b_auc,
                              treatment_metric_pct=t_metric, treatment_auc=t_auc,
                              exchange_rate=(d_auc * 1000.0) / d_metric)


# ---------------------------------------------------------------------------
# pipeline plumbing shared by the CLI, the sweep, and acceptance runs

@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    n_products: int = 10_000
    n_queries: int = 2_000
    categories: int = 50
    n_interactions: int = 200_000
    label_noise: float = 0.05
    gen: GenerationConfig = field(default_factory=GenerationConfig)
    dims: EncoderDims = field(default_factory=EncoderDims)
    mrl: MrlConfig = field(default_factory=MrlConfig)
    stage1_steps: int = 500
    stage2_steps: int = 500
    stage1_queue_depth: int = 0
    batch_size: int = 8
    shards: int = 4
    queue_depth: int = 5
    tau: float = 0.05
    learning_rate: float = 0.05
    dataset_fraction: float = 1.0
    seq_len: int = 100
    ctr_users: int = 150
    ctr_events_per_user: int = 24
    ctr_lr: float = 0.2
    recall_k: int = 1


def build_corpus(cfg: PipelineConfig) -> Corpus:
    corpus = generate_corpus(cfg.seed, cfg.n_products, cfg.n_queries, cfg.categories, cfg.gen)
    corpus.interactions = generate_interactions(corpus, cfg.n_interactions,
                                                label_noise=cfg.label_noise)
    return corpus


def curate_triplets(corpus: Corpus, cfg: PipelineConfig) -> tuple[list[TrainingTriplet], dict]:
    scorer = EncoderScorer(corpus, EncoderParams.init(cfg.seed, cfg.dims))
    target = CategoryHistogram.of_interactions(corpus, corpus.interactions)
    return run_pipeline(corpus.interactions, corpus, scorer, target, cfg.seed)


def _subset_triplets(triplets: Sequence[TrainingTriplet], fraction: float,
                     seed: int) -> list[TrainingTriplet]:
    if not 0 < fraction <= 1:
        raise ConfigError("dataset_fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(triplets)
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(triplets))))
    idx = rng.permutation(len(triplets))[:n]
    return [triplets[i] for i in sorted(idx)]


def train_encoder(corpus: Corpus, triplets: Sequence[TrainingTriplet], cfg: PipelineConfig,
                  seed: int, queue_depth: int | None = None,
                  stage1_snapshots: Sequence[int] = ()
                  ) -> tuple[EncoderParams, dict[int, EncoderParams]]:
    """Stage-1 in-batch contrast, then stage-2 with hard negatives and the
    spatial-temporal queue (depth overridable for ablations)."""
    data = _subset_triplets(triplets, cfg.dataset_fraction, seed)
    k2 = cfg.queue_depth if queue_depth is None else queue_depth
    snapshots: dict[int, EncoderParams] = {}
    params: EncoderParams | None = None
    if cfg.stage1_steps > 0:
        c1 = TrainerConfig(batch_size=cfg.batch_size, shards=cfg.shards,
                           queue_depth=cfg.stage1_queue_depth, tau=cfg.tau,
                           stage=STAGE_INFONCE, mrl=cfg.mrl, steps=cfg.stage1_steps,
                           learning_rate=cfg.learning_rate, seed=seed)
        params, _, snapshots = train(c1, data, corpus, dims=cfg.dims,
                                     snapshot_steps=stage1_snapshots)
    if cfg.stage2_steps > 0:
        c2 = TrainerConfig(batch_size=cfg.batch_size, shards=cfg.shards,
                           queue_depth=k2, tau=cfg.tau, stage=STAGE_CIRCLE,
                           mrl=cfg.mrl, steps=cfg.stage2_steps,
                           learning_rate=cfg.learning_rate, seed=seed)
        params, _, _ = train(c2, data, corpus, params_in=params, dims=cfg.dims)
    if params is None:
        params = EncoderParams.init(seed, cfg.dims)
    return params, snapshots


def recall_pct(params: EncoderParams, corpus: Corpus, k: int = 1,
               table: VersionedTable | None = None) -> float:
    report = recall_suite(params, corpus, ks=(k,), table=table)[0]
    return 100.0 * report.value


def ctr_auc_for_params(params: EncoderParams, corpus: Corpus, cfg: PipelineConfig,
                       seed: int, seq_len: int | None = None,
                       use_multimodal: bool = True) -> float:
    """Train the CTR head on synthetic click data under these embeddings and
    return held-out AUC."""
    product_vecs = product_vector_map(params, corpus)
    query_vecs = query_vector_map(params, corpus)
    length = cfg.seq_len if seq_len is None else seq_len
    data_cfg = CtrDataConfig(n_users=cfg.ctr_users, events_per_user=cfg.ctr_events_per_user,
                             seq_len=length, seed=seed)
    train_examples = build_examples(corpus, product_vecs, query_vecs, data_cfg)
    eval_cfg = replace(data_cfg, n_users=max(40, cfg.ctr_users // 3), seed=seed + 90001)
    eval_examples = build_examples(corpus, product_vecs, query_vecs, eval_cfg)
    head = CubeParams.init(d_id=data_cfg.d_id, d_mm=params.dims.d_full)
    head, _ = train_ctr(head, train_examples,
                        CtrTrainConfig(seed=seed, learning_rate=cfg.ctr_lr,
                                       use_multimodal=use_multimodal))
    return evaluate_auc(head, eval_examples, use_multimodal=use_multimodal)


# ---------------------------------------------------------------------------
# scaling sweeps

AXIS_NEGATIVES = "negatives"
AXIS_SEQUENCE_LENGTH = "sequence_length"
AXIS_DATASET_FRACTION = "dataset_fraction"
SWEEP_AXES = (AXIS_NEGATIVES, AXIS_SEQUENCE_LENGTH, AXIS_DATASET_FRACTION)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    grid: tuple[float, ...]
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"axis must be one of {SWEEP_AXES}")
        if not self.grid:
            raise ConfigError("grid must be non-empty")
        if self.axis == AXIS_NEGATIVES:
            if any(v < 0 for v in self.grid):
                raise ConfigError("queue depths must be >= 0")
        elif any(v <= 0 for v in self.grid):
            raise ConfigError("grid values must be positive")
        if list(self.grid) != sorted(self.grid):
            raise ConfigError("grid must be sorted ascending")
        if not self.seeds:
            raise ConfigError("at least one seed required")


@dataclass(frozen=True)
class SweepRow:
    value: float
    recall_pct: float
    auc: float
    rate_vs_prev: float | None
    failed: bool = False


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    rows: tuple[SweepRow, ...]


def run_sweep(spec: SweepSpec, cfg: PipelineConfig, corpus: Corpus | None = None,
              triplets: Sequence[TrainingTriplet] | None = None) -> SweepResult:
    """Train/evaluate the pipeline at every grid point, varying only the
    requested axis; points whose training diverges are marked failed and the
    sweep continues. Results are averaged over the spec's seeds."""
    from .errors import DivergenceError

    if corpus is None:
        corpus = build_corpus(cfg)
    if triplets is None:
        triplets, _ = curate_triplets(corpus, cfg)

    # the encoder only depends on the axis for negatives/dataset_fraction;
    # for sequence_length train once per seed and reuse
    encoder_cache: dict[tuple, EncoderParams] = {}

    def encoder_for(value: float, seed: int) -> EncoderParams:
        if spec.axis == AXIS_NEGATIVES:
            key = ("k", int(value), seed)
            if key not in encoder_cache:
                encoder_cache[key], _ = train_encoder(corpus, triplets, cfg, seed,
                                                      queue_depth=int(value))
        elif spec.axis == AXIS_DATASET_FRACTION:
            key = ("frac", float(value), seed)
            if key not in encoder_cache:
                sub_cfg = replace(cfg, dataset_fraction=float(value))
                encoder_cache[key], _ = train_encoder(corpus, triplets, sub_cfg, seed)
        else:
            key = ("fixed", seed)
            if key not in encoder_cache:
                encoder_cache[key], _ = train_encoder(corpus, triplets, cfg, seed)
        return encoder_cache[key]

    rows: list[SweepRow] = []
    prev: tuple[float, float] | None = None
    for value in spec.grid:
        recalls, aucs = [], []
        failed = False
        for seed in spec.seeds:
            try:
                params = encoder_for(value, seed)
                seq_len = int(value) if spec.axis == AXIS_SEQUENCE_LENGTH else None
                recalls.append(recall_pct(params, corpus, k=cfg.recall_k))
                aucs.append(ctr_auc_for_params(params, corpus, cfg, seed, seq_len=seq_len))
            except DivergenceError:
                failed = True
                break
        if failed:
            rows.append(SweepRow(value=float(value), recall_pct=float("nan"),
                                 auc=float("nan"), rate_vs_prev=None, failed=True))
            continue
        recall = float(np.mean(recalls))
        auc_v = float(np.mean(aucs))
        rate = None
        if prev is not None and recall != prev[0]:
            rate = exchange_rate((prev[0], prev[1]), (recall, auc_v)).exchange_rate
        rows.append(SweepRow(value=float(value), recall_pct=recall, auc=auc_v,
                             rate_vs_prev=rate))
        prev = (recall, auc_v)
    return SweepResult(spec=spec, rows=tuple(rows))


def save_sweep_csv(result: SweepResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {EXCHANGE_RATE_CONVENTION}\n")
        fh.write("axis,value,recall_pct,auc,exchange_rate_vs_prev,failed\n")
        for row in result.rows:
            rate = "" if row.rate_vs_prev is None else repr(row.rate_vs_prev)
            rec = "" if row.failed else repr(row.recall_pct)
            auc_v = "" if row.failed else repr(row.auc)
            fh.write(f"{result.spec.axis},{row.value!r},{rec},{auc_v},{rate},"
                     f"{int(row.failed)}\n")


def save_sweep_summary(result: SweepResult, path: str | Path) -> None:
    lines = [f"sweep over {result.spec.axis}; seeds {list(result.spec.seeds)}",
             EXCHANGE_RATE_CONVENTION]
    prev: SweepRow | None = None
    for row in result.rows:
        if row.failed:
            lines.append(f"  value {row.value:g}: FAILED (training divergence)")
        else:
            marginal = ""
            if prev is not None and not prev.failed:
                marginal = (f"  (marginal: recall {row.recall_pct - prev.recall_pct:+.2f} pct-pt, "
                            f"auc {row.auc - prev.auc:+.4f}")
                marginal += f", rate {row.rate_vs_prev:.3f})" if row.rate_vs_prev is not None \
                    else ", rate undefined)"
            lines.append(f"  value {row.value:g}: recall {row.recall_pct:.2f}% "
                         f"auc {row.auc:.4f}{marginal}")
        prev = row
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# table export

def export_table(params: EncoderParams, corpus: Corpus, dtype: str = "f32",
                 view_dim: int | None = None, disk_dir: str | Path | None = None
                 ) -> VersionedTable:
    """Encode every product and publish one flushed table."""
    vec_map = product_vector_map(params, corpus, view_dim)
    dim = view_dim if view_dim is not None else params.dims.d_full
    table = VersionedTable(dim=dim, dtype=dtype, disk_dir=disk_dir)
    for pid in sorted(vec_map):
        table.upsert(pid, vec_map[pid])
    table.flush()
    return table
