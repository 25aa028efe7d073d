"""Synthetic e-commerce corpus generation and line-delimited persistence.

Products carry one dense "image" feature vector per SKU plus token-id titles;
queries are text, image, or text+image. Per-category latent centroids induce
the ground-truth relevance used everywhere downstream: a query is relevant to
exactly the products of its intent category. Popularity follows a power law
so a small head of items dominates interaction traffic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataIntegrityError

TEXT = "text"
IMAGE = "image"
TEXT_IMAGE = "text+image"
MODALITIES = (TEXT, IMAGE, TEXT_IMAGE)

BEHAVIORS = ("click", "favorite", "cart", "purchase")

# Query-modality mix derived from the relative sizes of the nine retrieval
# scenarios used for first-stage finetuning data (grouped by query side):
# text 1.1 / 2.6, image 0.9 / 2.6, text+image 0.6 / 2.6.
DEFAULT_SCENARIO_MIX = (1.1 / 2.6, 0.9 / 2.6, 0.6 / 2.6)
DEFAULT_BEHAVIOR_MIX = (0.55, 0.15, 0.15, 0.15)

TRAIN_SPLIT = "train"
EVAL_SPLIT = "eval"


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for the synthetic generator. Token-id layout:
    [0, categories) category tokens, then the attribute lexicon, then fillers."""

    categories: int = 50
    d_img: int = 32
    attribute_vocab: int = 200
    filler_vocab: int = 262
    skus_min: int = 1
    skus_max: int = 3
    title_attrs_min: int = 2
    title_attrs_max: int = 5
    title_fillers: int = 3
    query_attrs: int = 2
    query_fillers: int = 1
    product_noise: float = 0.45
    sku_noise: float = 0.10
    query_noise: float = 0.45
    popularity_exponent: float = 1.2
    scenario_mix: tuple[float, float, float] = DEFAULT_SCENARIO_MIX
    holdout_fraction: float = 0.2

    @property
    def vocab_size(self) -> int:
        return self.categories + self.attribute_vocab + self.filler_vocab

    @property
    def attribute_lexicon(self) -> range:
        return range(self.categories, self.categories + self.attribute_vocab)


@dataclass(frozen=True)
class CorpusRecord:
    product_id: int
    sku_ids: tuple[int, ...]
    leaf_category: int
    image_features: tuple[np.ndarray, ...]  # one per SKU, aligned with sku_ids
    title_tokens: tuple[int, ...]
    attribute_entities: tuple[int, ...]
    popularity: float

    def __post_init__(self):
        if len(set(self.sku_ids)) != len(self.sku_ids) or not self.sku_ids:
            raise DataIntegrityError(f"product {self.product_id}: sku_ids must be distinct and non-empty")
        if len(self.image_features) != len(self.sku_ids):
            raise DataIntegrityError(f"product {self.product_id}: one image feature per SKU required")
        if not set(self.attribute_entities) <= set(self.title_tokens):
            raise DataIntegrityError(f"product {self.product_id}: attribute entities must be title tokens")
        if not self.popularity > 0:
            raise DataIntegrityError(f"product {self.product_id}: popularity must be positive")


@dataclass(frozen=True)
class QueryRecord:
    query_id: int
    modality: str
    text_tokens: tuple[int, ...] | None
    image_feature: np.ndarray | None
    intent_category: int
    split: str = TRAIN_SPLIT
    # the product this query was synthesized around; interactions mostly pair
    # the query with it. Relevance stays category-level.
    anchor_product_id: int | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataIntegrityError(f"query {self.query_id}: unknown modality {self.modality!r}")
        has_text = self.text_tokens is not None
        has_image = self.image_feature is not None
        expected = {TEXT: (True, False), IMAGE: (False, True), TEXT_IMAGE: (True, True)}
        if (has_text, has_image) != expected[self.modality]:
            raise DataIntegrityError(f"query {self.query_id}: fields do not match modality {self.modality}")


@dataclass(frozen=True)
class InteractionPair:
    query: QueryRecord
    item_product_id: int
    item_sku_id: int
    behavior: str
    timestamp: int


@dataclass
class Corpus:
    seed: int
    config: GenerationConfig
    centroids: np.ndarray  # (categories, d_img)
    products: list[CorpusRecord]
    queries: list[QueryRecord]
    interactions: list[InteractionPair] = field(default_factory=list)

    def __post_init__(self):
        self.products_by_id = {p.product_id: p for p in self.products}
        self.queries_by_id = {q.query_id: q for q in self.queries}
        self.sku_to_product: dict[int, int] = {}
        for p in self.products:
            for sku in p.sku_ids:
                self.sku_to_product[sku] = p.product_id
        self.by_category: dict[int, list[int]] = {}
        for p in self.products:
            self.by_category.setdefault(p.leaf_category, []).append(p.product_id)

    def sku_feature(self, sku_id: int) -> np.ndarray:
        pid = self.sku_to_product.get(sku_id)
        if pid is None:
            raise DataIntegrityError(f"unknown SKU {sku_id}")
        product = self.products_by_id[pid]
        return product.image_features[product.sku_ids.index(sku_id)]


def _check_ratios(name: str, ratios: Sequence[float]) -> np.ndarray:
    arr = np.asarray(ratios, dtype=np.float64)
    if np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > 1e-9:
        raise ConfigError(f"{name} must be non-negative and sum to 1, got {list(ratios)}")
    return arr


def generate_corpus(
    seed: int,
    n_products: int,
    n_queries: int,
    categories: int,
    config: GenerationConfig | None = None,
) -> Corpus:
    """Deterministically build products and queries for one seed."""
    if n_products < 1 or n_queries < 1:
        raise ConfigError("counts must be positive")
    if categories < 2:
        raise ConfigError("need at least two categories")
    cfg = config or GenerationConfig()
    if cfg.categories != categories:
        cfg = replace(cfg, categories=categories)
    _check_ratios("scenario_mix", cfg.scenario_mix)
    rng = np.random.default_rng(seed)

    centroids = rng.normal(size=(categories, cfg.d_img))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    attr_lo = categories
    attr_hi = categories + cfg.attribute_vocab
    filler_lo = attr_hi
    filler_hi = cfg.vocab_size

    products: list[CorpusRecord] = []
    next_sku = 0
    for pid in range(n_products):
        cat = int(rng.integers(0, categories))
        n_skus = int(rng.integers(cfg.skus_min, cfg.skus_max + 1))
        sku_ids = tuple(range(next_sku, next_sku + n_skus))
        next_sku += n_skus
        base = centroids[cat] + cfg.product_noise * rng.normal(size=cfg.d_img)
        feats = tuple(base + cfg.sku_noise * rng.normal(size=cfg.d_img) for _ in range(n_skus))
        n_attrs = int(rng.integers(cfg.title_attrs_min, cfg.title_attrs_max + 1))
        attrs = tuple(int(t) for t in rng.choice(np.arange(attr_lo, attr_hi), size=n_attrs, replace=False))
        fillers = tuple(int(t) for t in rng.integers(filler_lo, filler_hi, size=cfg.title_fillers))
        title = (cat,) + attrs + fillers
        popularity = float(rng.pareto(cfg.popularity_exponent) + 1.0)
        products.append(CorpusRecord(
            product_id=pid, sku_ids=sku_ids, leaf_category=cat,
            image_features=feats, title_tokens=title,
            attribute_entities=attrs, popularity=popularity,
        ))

    # queries are synthesized around an anchor product (popularity-weighted
    # within a uniformly drawn intent category): an image query is a noisy
    # view of the anchor's base feature, a text query reuses a slice of the
    # anchor's title. Relevance remains category-level.
    by_cat: dict[int, list[int]] = {}
    for p in products:
        by_cat.setdefault(p.leaf_category, []).append(p.product_id)
    pop = np.array([p.popularity for p in products])
    cat_weights = {cat: pop[pids] / pop[pids].sum() for cat, pids in by_cat.items()}
    base_features = {p.product_id: np.mean(np.stack(p.image_features), axis=0)
                     for p in products}

    queries: list[QueryRecord] = []
    for qid in range(n_queries):
        modality = MODALITIES[int(rng.choice(3, p=np.asarray(cfg.scenario_mix)))]
        intent = int(rng.integers(0, categories))
        while intent not in by_cat:
            intent = int(rng.integers(0, categories))
        pids = by_cat[intent]
        anchor = pids[int(rng.choice(len(pids), p=cat_weights[intent]))]
        anchor_product = products[anchor]
        text_tokens = None
        image_feature = None
        if modality in (TEXT, TEXT_IMAGE):
            n_attrs = min(cfg.query_attrs, len(anchor_product.attribute_entities))
            attrs = tuple(int(t) for t in rng.choice(np.asarray(anchor_product.attribute_entities),
                                                     size=n_attrs, replace=False))
            fillers = tuple(int(t) for t in rng.integers(filler_lo, filler_hi, size=cfg.query_fillers))
            text_tokens = (intent,) + attrs + fillers
        if modality in (IMAGE, TEXT_IMAGE):
            image_feature = base_features[anchor] + cfg.query_noise * rng.normal(size=cfg.d_img)
        split = EVAL_SPLIT if rng.random() < cfg.holdout_fraction else TRAIN_SPLIT
        queries.append(QueryRecord(
            query_id=qid, modality=modality, text_tokens=text_tokens,
            image_feature=image_feature, intent_category=intent, split=split,
            anchor_product_id=anchor,
        ))

    return Corpus(seed=seed, config=cfg, centroids=centroids, products=products, queries=queries)


def generate_interactions(
    corpus: Corpus,
    n_pairs: int,
    behavior_mix: Sequence[float] = DEFAULT_BEHAVIOR_MIX,
    scenario_mix: Sequence[float] | None = None,
    label_noise: float = 0.05,
    seed: int | None = None,
    anchor_affinity: float = 0.7,
) -> list[InteractionPair]:
    """Sample query-item interactions.

    Each pair's item comes from the query's intent category with probability
    1 - label_noise, otherwise from another category (one sticky lookalike
    per confused query). Correct pairs hit the query's anchor product with
    probability `anchor_affinity`, else a popularity-weighted same-category
    browse. Timestamps are strictly increasing.
    """
    bmix = _check_ratios("behavior_mix", behavior_mix)
    if len(bmix) != len(BEHAVIORS):
        raise ConfigError(f"behavior_mix needs {len(BEHAVIORS)} entries")
    smix = _check_ratios("scenario_mix", scenario_mix if scenario_mix is not None
                         else corpus.config.scenario_mix)
    rng = np.random.default_rng(corpus.seed + 0x5EED if seed is None else seed)

    queries_by_modality = {m: [q for q in corpus.queries if q.modality == m] for m in MODALITIES}
    for m, ratio in zip(MODALITIES, smix):
        if ratio > 0 and not queries_by_modality[m]:
            raise ConfigError(f"scenario_mix requests {m} queries but the corpus has none")

    pop = np.array([p.popularity for p in corpus.products])
    cat_weights: dict[int, np.ndarray] = {}
    for cat, pids in corpus.by_category.items():
        w = pop[pids]
        cat_weights[cat] = w / w.sum()

    categories = sorted(corpus.by_category)
    # Label noise is realized per query: a query is "confused" with
    # probability label_noise, and all of a confused query's interactions hit
    # one sticky cross-category lookalike item. Per pair, the item is still
    # cross-category with probability label_noise, but the number of distinct
    # wrong (query, SKU) pairs stays near the confused-query count, so the
    # downstream pick-the-hardest dedup cannot amplify the noise.
    confused: dict[int, tuple[int, int] | None] = {}

    def noise_item(query: QueryRecord) -> tuple[int, int] | None:
        if query.query_id not in confused:
            target = None
            if label_noise > 0 and rng.random() < label_noise:
                others = [c for c in categories if c != query.intent_category]
                cat = others[int(rng.integers(0, len(others)))]
                pids = corpus.by_category[cat]
                pid = pids[int(rng.integers(0, len(pids)))]
                product = corpus.products_by_id[pid]
                sku = product.sku_ids[int(rng.integers(0, len(product.sku_ids)))]
                target = (pid, sku)
            confused[query.query_id] = target
        return confused[query.query_id]

    pairs: list[InteractionPair] = []
    for i in range(n_pairs):
        modality = MODALITIES[int(rng.choice(3, p=smix))]
        pool = queries_by_modality[modality]
        query = pool[int(rng.integers(0, len(pool)))]
        wrong = noise_item(query)
        if wrong is not None:
            pid, sku = wrong
        else:
            # mostly the query's own anchor, otherwise a same-category browse
            if query.anchor_product_id is not None and rng.random() < anchor_affinity:
                pid = query.anchor_product_id
            else:
                pids = corpus.by_category[query.intent_category]
                pid = pids[int(rng.choice(len(pids), p=cat_weights[query.intent_category]))]
            product = corpus.products_by_id[pid]
            sku = product.sku_ids[int(rng.integers(0, len(product.sku_ids)))]
        behavior = BEHAVIORS[int(rng.choice(len(BEHAVIORS), p=bmix))]
        pairs.append(InteractionPair(query=query, item_product_id=pid,
                                     item_sku_id=sku, behavior=behavior, timestamp=i))
    return pairs


# ---------------------------------------------------------------------------
# line-delimited persistence: one JSON object per line, fixed field order

PRODUCTS_FILE = "products.jsonl"
QUERIES_FILE = "queries.jsonl"
INTERACTIONS_FILE = "interactions.jsonl"
CORPUS_META_FILE = "corpus_meta.json"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": corpus.seed, "config": asdict(corpus.config)}
    meta["config"]["scenario_mix"] = list(corpus.config.scenario_mix)
    (out / CORPUS_META_FILE).write_text(_dumps(meta) + "\n")
    with open(out / PRODUCTS_FILE, "w") as fh:
        for p in corpus.products:
            fh.write(_dumps({
                "product_id": p.product_id,
                "sku_ids": list(p.sku_ids),
                "leaf_category": p.leaf_category,
                "image_features": [[float(x) for x in f] for f in p.image_features],
                "title_tokens": list(p.title_tokens),
                "attribute_entities": list(p.attribute_entities),
                "popularity": p.popularity,
            }) + "\n")
    with open(out / QUERIES_FILE, "w") as fh:
        for q in corpus.queries:
            fh.write(_dumps({
                "query_id": q.query_id,
                "modality": q.modality,
                "text_tokens": list(q.text_tokens) if q.text_tokens is not None else None,
                "image_feature": [float(x) for x in q.image_feature] if q.image_feature is not None else None,
                "intent_category": q.intent_category,
                "split": q.split,
                "anchor_product_id": q.anchor_product_id,
            }) + "\n")
    with open(out / INTERACTIONS_FILE, "w") as fh:
        for it in corpus.interactions:
            fh.write(_dumps({
                "query_id": it.query.query_id,
                "item_product_id": it.item_product_id,
                "item_sku_id": it.item_sku_id,
                "behavior": it.behavior,
                "timestamp": it.timestamp,
            }) + "\n")


def _iter_jsonl(path: Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def load_corpus(in_dir: str | Path) -> Corpus:
    src = Path(in_dir)
    meta = json.loads((src / CORPUS_META_FILE).read_text())
    cfg_raw = dict(meta["config"])
    cfg_raw["scenario_mix"] = tuple(cfg_raw["scenario_mix"])
    cfg = GenerationConfig(**cfg_raw)

    products = []
    for rec in _iter_jsonl(src / PRODUCTS_FILE):
        products.append(CorpusRecord(
            product_id=rec["product_id"],
            sku_ids=tuple(rec["sku_ids"]),
            leaf_category=rec["leaf_category"],
            image_features=tuple(np.asarray(f, dtype=np.float64) for f in rec["image_features"]),
            title_tokens=tuple(rec["title_tokens"]),
            attribute_entities=tuple(rec["attribute_entities"]),
            popularity=rec["popularity"],
        ))
    queries = []
    for rec in _iter_jsonl(src / QUERIES_FILE):
        queries.append(QueryRecord(
            query_id=rec["query_id"],
            modality=rec["modality"],
            text_tokens=tuple(rec["text_tokens"]) if rec["text_tokens"] is not None else None,
            image_feature=np.asarray(rec["image_feature"], dtype=np.float64)
            if rec["image_feature"] is not None else None,
            intent_category=rec["intent_category"],
            split=rec.get("split", TRAIN_SPLIT),
            anchor_product_id=rec.get("anchor_product_id"),
        ))

    # Centroids are derivable only at generation time; reconstruct category
    # means for consumers that want an approximate latent reference.
    cat_sums: dict[int, np.ndarray] = {}
    cat_counts: dict[int, int] = {}
    for p in products:
        acc = cat_sums.setdefault(p.leaf_category, np.zeros(cfg.d_img))
        for f in p.image_features:
            acc += f
            cat_counts[p.leaf_category] = cat_counts.get(p.leaf_category, 0) + 1
    centroids = np.zeros((cfg.categories, cfg.d_img))
    for cat, s in cat_sums.items():
        centroids[cat] = s / cat_counts[cat]

    corpus = Corpus(seed=meta["seed"], config=cfg, centroids=centroids,
                    products=products, queries=queries)

    inter_path = src / INTERACTIONS_FILE
    if inter_path.exists():
        pairs = []
        for rec in _iter_jsonl(inter_path):
            query = corpus.queries_by_id[rec["query_id"]]
            pid = rec["item_product_id"]
            sku = rec["item_sku_id"]
            if corpus.sku_to_product.get(sku) != pid:
                raise DataIntegrityError(f"interaction references SKU {sku} not in product {pid}")
            pairs.append(InteractionPair(query=query, item_product_id=pid, item_sku_id=sku,
                                         behavior=rec["behavior"], timestamp=rec["timestamp"]))
        corpus.interactions = pairs
    return corpus
