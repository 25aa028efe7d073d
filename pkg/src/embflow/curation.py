"""Purchase-pair curation: similarity dedup, SKU merge, category-distribution
alignment, entity-count filtering, and hard-negative attachment.

Stages run in a fixed order and each one reports in/out counts, so corpus
shrinkage is visible per stage. All stages are pure batch transforms,
deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Corpus, InteractionPair, QueryRecord
from .encoder import EncoderInput, EncoderParams, encode_batch
from .errors import ContractViolation, DataIntegrityError
from .numerics import Embedding, cosine_similarity


@dataclass(frozen=True)
class CurationPair:
    """A (query, product) candidate carrying the SKUs that back it."""

    query: QueryRecord
    product_id: int
    leaf_category: int
    sku_ids: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class TrainingTriplet:
    query: QueryRecord
    positive_product_id: int
    positive_sku_ids: tuple[int, ...]
    hard_negative_product_id: int | None = None

    def __post_init__(self):
        if self.hard_negative_product_id == self.positive_product_id:
            raise DataIntegrityError("hard negative must be a different product")


@dataclass(frozen=True)
class CategoryHistogram:
    counts: dict[int, int]

    def __post_init__(self):
        if sum(self.counts.values()) <= 0:
            raise ContractViolation("histogram total must be positive")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def proportion(self, category: int) -> float:
        return self.counts.get(category, 0) / self.total

    @classmethod
    def of_interactions(cls, corpus: Corpus, pairs: Iterable[InteractionPair]) -> "CategoryHistogram":
        counts: dict[int, int] = {}
        for p in pairs:
            cat = corpus.products_by_id[p.item_product_id].leaf_category
            counts[cat] = counts.get(cat, 0) + 1
        return cls(counts=counts)


Scorer = Callable[[InteractionPair], float]


class EncoderScorer:
    """Query-item similarity under an encoder checkpoint (random-init params
    give the pre-training baseline). Embeddings are precomputed in bulk."""

    def __init__(self, corpus: Corpus, params: EncoderParams):
        self._query_emb: dict[int, np.ndarray] = {}
        self._sku_emb: dict[int, np.ndarray] = {}
        q_inputs, q_ids = [], []
        for q in corpus.queries:
            q_inputs.append(EncoderInput(token_ids=q.text_tokens,
                                         image_features=q.image_feature))
            q_ids.append(q.query_id)
        q_emb = encode_batch(params, q_inputs)
        for qid, row in zip(q_ids, q_emb):
            self._query_emb[qid] = row
        s_inputs, s_ids = [], []
        for p in corpus.products:
            for sku, feat in zip(p.sku_ids, p.image_features):
                s_inputs.append(EncoderInput(token_ids=p.title_tokens,
                                             image_features=feat))
                s_ids.append(sku)
        s_emb = encode_batch(params, s_inputs)
        for sku, row in zip(s_ids, s_emb):
            self._sku_emb[sku] = row

    def __call__(self, pair: InteractionPair) -> float:
        q = self._query_emb[pair.query.query_id]
        s = self._sku_emb[pair.item_sku_id]
        return float(np.dot(q, s))


def dedup_by_similarity(pairs: Sequence[InteractionPair], corpus: Corpus,
                        scorer: Scorer) -> list[CurationPair]:
    """Keep, per purchased SKU, only the lowest-scoring (hardest) pair.

    Score ties break toward the lower query id; pairs with unique SKUs pass
    through. Output order follows first appearance of each surviving SKU.
    """
    best: dict[int, tuple[float, int, InteractionPair]] = {}
    order: list[int] = []
    for pair in pairs:
        score = float(scorer(pair))
        if not np.isfinite(score):
            raise ContractViolation(f"scorer returned non-finite value for SKU {pair.item_sku_id}")
        key = (score, pair.query.query_id)
        if pair.item_sku_id not in best:
            best[pair.item_sku_id] = (score, pair.query.query_id, pair)
            order.append(pair.item_sku_id)
        elif key < best[pair.item_sku_id][:2]:
            best[pair.item_sku_id] = (score, pair.query.query_id, pair)
    out = []
    for sku in order:
        score, _, pair = best[sku]
        pid = corpus.sku_to_product.get(sku)
        if pid is None or pid != pair.item_product_id:
            raise DataIntegrityError(f"SKU {sku} does not resolve to product {pair.item_product_id}")
        product = corpus.products_by_id[pid]
        out.append(CurationPair(query=pair.query, product_id=pid,
                                leaf_category=product.leaf_category,
                                sku_ids=(sku,), score=score))
    return out


def merge_skus(pairs: Sequence[CurationPair], corpus: Corpus) -> list[CurationPair]:
    """Collapse SKU-level pairs to at most one pair per product.

    The surviving pair is the minimum-score one (query-id tie-break) and it
    carries the union of the SKUs seen for that product, attaching the richer
    multi-image evidence.
    """
    grouped: dict[int, list[CurationPair]] = {}
    order: list[int] = []
    for p in pairs:
        if p.product_id not in corpus.products_by_id:
            raise DataIntegrityError(f"unknown product {p.product_id}")
        if p.product_id not in grouped:
            order.append(p.product_id)
        grouped.setdefault(p.product_id, []).append(p)
    out = []
    for pid in order:
        group = grouped[pid]
        winner = min(group, key=lambda p: (p.score, p.query.query_id))
        skus = tuple(sorted({s for p in group for s in p.sku_ids}))
        out.append(CurationPair(query=winner.query, product_id=pid,
                                leaf_category=winner.leaf_category,
                                sku_ids=skus, score=winner.score))
    return out


def align_distribution(pairs: Sequence[CurationPair], target: CategoryHistogram,
                       seed: int) -> tuple[list[CurationPair], dict[int, int]]:
    """Resample pairs so the category histogram tracks the target proportions.

    Overrepresented categories are downsampled; underrepresented ones are
    topped up by duplicating same-category pairs with a fresh query drawn from
    that category's query pool. Target mass on a category absent from the
    source is recorded as a shortfall, not an error. Output proportions match
    the target to within integer rounding of the total count.
    """
    by_cat: dict[int, list[CurationPair]] = {}
    for p in pairs:
        by_cat.setdefault(p.leaf_category, []).append(p)
    missing_from_target = [c for c in by_cat if target.counts.get(c, 0) == 0]
    if missing_from_target:
        raise ContractViolation(
            f"target histogram has no mass for source categories {sorted(missing_from_target)}")

    rng = np.random.default_rng(seed)
    n_total = len(pairs)
    shortfalls: dict[int, int] = {}
    out: list[CurationPair] = []
    for cat in sorted(target.counts):
        want = int(round(target.proportion(cat) * n_total))
        have = by_cat.get(cat, [])
        if not have:
            if want > 0:
                shortfalls[cat] = want
            continue
        if want <= len(have):
            idx = rng.choice(len(have), size=want, replace=False)
            out.extend(have[i] for i in sorted(idx))
        else:
            out.extend(have)
            queries = [p.query for p in have]
            for _ in range(want - len(have)):
                base = have[int(rng.integers(0, len(have)))]
                query = queries[int(rng.integers(0, len(queries)))]
                out.append(CurationPair(query=query, product_id=base.product_id,
                                        leaf_category=base.leaf_category,
                                        sku_ids=base.sku_ids, score=base.score))
    return out, shortfalls


def entity_filter(pairs: Sequence[CurationPair], corpus: Corpus,
                  lexicon: frozenset[int] | set[int],
                  min_entities: int = 2) -> list[CurationPair]:
    """Keep pairs whose query-text + item-title token union has strictly more
    than `min_entities` distinct lexicon entries."""
    if min_entities < 0:
        raise ContractViolation("min_entities must be >= 0")
    lex = frozenset(lexicon)
    out = []
    for p in pairs:
        tokens = set(corpus.products_by_id[p.product_id].title_tokens)
        if p.query.text_tokens:
            tokens |= set(p.query.text_tokens)
        if len(tokens & lex) > min_entities:
            out.append(p)
    return out


def attach_hard_negatives(pairs: Sequence[CurationPair], corpus: Corpus,
                          seed: int) -> tuple[list[TrainingTriplet], int]:
    """Sample one same-leaf-category, different-product hard negative per pair.

    Singleton categories produce a triplet without a hard negative and bump
    the returned shortfall count.
    """
    rng = np.random.default_rng(seed)
    triplets = []
    shortfall = 0
    for p in pairs:
        candidates = [pid for pid in corpus.by_category.get(p.leaf_category, [])
                      if pid != p.product_id]
        hard = None
        if candidates:
            hard = candidates[int(rng.integers(0, len(candidates)))]
        else:
            shortfall += 1
        triplets.append(TrainingTriplet(query=p.query,
                                        positive_product_id=p.product_id,
                                        positive_sku_ids=p.sku_ids,
                                        hard_negative_product_id=hard))
    return triplets, shortfall


def run_pipeline(
    interactions: Sequence[InteractionPair],
    corpus: Corpus,
    scorer: Scorer,
    target: CategoryHistogram,
    seed: int,
    min_entities: int = 2,
    lexicon: frozenset[int] | None = None,
) -> tuple[list[TrainingTriplet], dict]:
    """dedup -> merge -> align -> filter -> attach, with per-stage accounting."""
    lex = lexicon if lexicon is not None else frozenset(corpus.config.attribute_lexicon)
    report: dict = {"stages": []}

    deduped = dedup_by_similarity(interactions, corpus, scorer)
    report["stages"].append({"stage": "dedup", "in": len(interactions), "out": len(deduped)})

    merged = merge_skus(deduped, corpus)
    report["stages"].append({"stage": "merge", "in": len(deduped), "out": len(merged)})

    aligned, shortfalls = align_distribution(merged, target, seed)
    report["stages"].append({"stage": "align", "in": len(merged), "out": len(aligned),
                             "shortfalls": {str(k): v for k, v in sorted(shortfalls.items())}})

    filtered = entity_filter(aligned, corpus, lex, min_entities)
    report["stages"].append({"stage": "entity_filter", "in": len(aligned), "out": len(filtered)})

    triplets, hard_shortfall = attach_hard_negatives(filtered, corpus, seed)
    report["stages"].append({"stage": "attach_hard_negatives", "in": len(filtered),
                             "out": len(triplets), "missing_hard_negatives": hard_shortfall})
    return triplets, report


# ---------------------------------------------------------------------------
# persistence

TRIPLETS_FILE = "triplets.jsonl"
REPORT_FILE = "curation_report.json"


def save_triplets(triplets: Sequence[TrainingTriplet], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in triplets:
            fh.write(json.dumps({
                "query_id": t.query.query_id,
                "positive_product_id": t.positive_product_id,
                "positive_sku_ids": list(t.positive_sku_ids),
                "hard_negative_product_id": t.hard_negative_product_id,
            }, separators=(",", ":")) + "\n")


def load_triplets(path: str | Path, corpus: Corpus) -> list[TrainingTriplet]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(TrainingTriplet(
                query=corpus.queries_by_id[rec["query_id"]],
                positive_product_id=rec["positive_product_id"],
                positive_sku_ids=tuple(rec["positive_sku_ids"]),
                hard_negative_product_id=rec["hard_negative_product_id"],
            ))
    return out
