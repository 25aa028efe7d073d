"""Single command-line entry point for the whole lifecycle.

Subcommands: gen-data, curate, train, export-embeddings,
center (snapshot | delta | ingest | bench), train-ctr, eval-recall,
exchange-rate, sweep.

Exit codes: 0 success, 2 usage, 3 I/O or file-integrity failure,
4 training divergence, 1 invalid input. Failures print one
machine-parsable line: `error category=<cat> detail=<message>`.
Every run echoes its fully resolved configuration into the output
directory; all randomness derives from --seed. No environment variables
are consulted except EMBFLOW_VERBOSE.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import cube as cube_mod
from . import curation as curation_mod
from . import evalharness as harness
from .encoder import EncoderDims, EncoderParams, load_checkpoint, save_checkpoint
from .errors import (ConfigError, ContractViolation, DataIntegrityError, DivergenceError,
                     SnapshotIntegrityError, StaleDeltaError, UndefinedMetricError)
from .numerics import HIT_RECALL, TOP_K_PRECISION
from .repcenter import DeltaLog, RealtimeIngestor, VersionedTable, bench_cuckoo
from .trainer import (STAGE_CIRCLE, STAGE_INFONCE, TrainerConfig, save_loss_curve, train)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4


def _verbose() -> bool:
    return os.environ.get("EMBFLOW_VERBOSE", "") not in ("", "0")


def _info(msg: str) -> None:
    if _verbose():
        print(msg, file=sys.stderr)


def _echo_config(args: argparse.Namespace, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in sorted(vars(args).items()) if k != "func"}
    (out_dir / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n")


def _parse_kv_file(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_TRAIN_KEYS = {"stage": str, "steps": int, "batch_size": int, "shards": int,
               "queue_depth": int, "tau": float, "learning_rate": float, "seed": int}


def _trainer_config_from(args: argparse.Namespace) -> TrainerConfig:
    values: dict = {"stage": args.stage, "steps": args.steps, "batch_size": args.batch_size,
                    "shards": args.shards, "queue_depth": args.queue_depth, "tau": args.tau,
                    "learning_rate": args.lr, "seed": args.seed}
    if args.config is not None:
        for key, raw in _parse_kv_file(Path(args.config)).items():
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _TRAIN_KEYS[key](raw)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _TRAIN_KEYS[key](raw)
    return TrainerConfig(batch_size=values["batch_size"], shards=values["shards"],
                         queue_depth=values["queue_depth"], tau=values["tau"],
                         stage=values["stage"], steps=values["steps"],
                         learning_rate=values["learning_rate"], seed=values["seed"])


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    gen = corpus_mod.GenerationConfig(categories=args.categories,
                                      holdout_fraction=args.holdout_fraction)
    corpus = corpus_mod.generate_corpus(args.seed, args.products, args.queries,
                                        args.categories, gen)
    corpus.interactions = corpus_mod.generate_interactions(
        corpus, args.interactions, label_noise=args.label_noise, seed=args.seed + 0x5EED)
    corpus_mod.save_corpus(corpus, out)
    _echo_config(args, out)
    _info(f"wrote corpus with {len(corpus.products)} products, {len(corpus.queries)} queries, "
          f"{len(corpus.interactions)} interactions to {out}")
    return EXIT_OK


def cmd_curate(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    out = Path(args.out)
    if args.checkpoint is not None:
        params = load_checkpoint(args.checkpoint)
    else:
        params = EncoderParams.init(args.seed)
    scorer = curation_mod.EncoderScorer(corpus, params)
    target = curation_mod.CategoryHistogram.of_interactions(corpus, corpus.interactions)
    triplets, report = curation_mod.run_pipeline(
        corpus.interactions, corpus, scorer, target, args.seed,
        min_entities=args.min_entities)
    out.mkdir(parents=True, exist_ok=True)
    curation_mod.save_triplets(triplets, out / curation_mod.TRIPLETS_FILE)
    (out / curation_mod.REPORT_FILE).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _echo_config(args, out)
    _info(f"curated {len(triplets)} triplets; stage report at {out / curation_mod.REPORT_FILE}")
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    triplets = curation_mod.load_triplets(args.triplets, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _trainer_config_from(args)
    params_in = load_checkpoint(args.checkpoint_in) if args.checkpoint_in else None
    try:
        params, reports, _ = train(config, triplets, corpus, params_in=params_in)
    except DivergenceError as exc:
        (out / "divergence_dump.json").write_text(json.dumps(
            {"step": exc.step, "detail": str(exc)}, sort_keys=True) + "\n")
        raise
    save_checkpoint(params, out / "checkpoint.bin")
    save_loss_curve(reports, out / "loss_curve.csv")
    _echo_config(args, out)
    _info(f"trained {config.stage} for {config.steps} steps; "
          f"final loss {reports[-1].loss:.4f}; params at {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = harness.export_table(params, corpus, dtype=args.dtype, view_dim=args.view_dim)
    table.snapshot(out / "table.snap")
    _echo_config(args, out)
    _info(f"exported {len(table)} product embeddings (dtype {args.dtype}) "
          f"to {out / 'table.snap'}")
    return EXIT_OK


def cmd_center_snapshot(args) -> int:
    table = VersionedTable.load_snapshot(args.table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dtype is not None and args.dtype != table.dtype:
        converted = VersionedTable(dim=table.dim, dtype=args.dtype)
        for key, rv, payload in table.scan():
            from .repcenter import _decode_payload, _encode_payload, StoredRecord
            converted._record_counter = max(converted._record_counter, rv)
            converted._mem_insert_locked(
                key, StoredRecord(record_version=rv,
                                  payload=_encode_payload(_decode_payload(payload),
                                                          table.dim, args.dtype)))
        converted.table_version = table.table_version
        table = converted
    table.snapshot(out / "table.snap")
    _echo_config(args, out)
    _info(f"snapshot of {len(table)} records (version {table.table_version}) "
          f"written to {out / 'table.snap'}")
    return EXIT_OK


def cmd_center_delta(args) -> int:
    table = VersionedTable.load_snapshot(args.table)
    for delta_path in args.apply:
        delta = DeltaLog.load(delta_path, table.dim, table.dtype)
        table.apply_delta(delta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.snapshot(out / "table.snap")
    _echo_config(args, out)
    _info(f"applied {len(args.apply)} delta(s); table now at version {table.table_version}")
    return EXIT_OK


def cmd_center_ingest(args) -> int:
    if args.table is not None:
        table = VersionedTable.load_snapshot(args.table)
    else:
        table = VersionedTable(dim=args.dim, dtype=args.dtype or "f32")
    ingestor = RealtimeIngestor(table, flush_interval=args.flush_interval,
                                capacity=args.capacity)
    n = 0
    with open(args.records) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            values = np.asarray(rec["values"], dtype=np.float64)
            while not ingestor.offer(int(rec["key"]), values):
                import time
                time.sleep(args.flush_interval / 20)
            n += 1
    metrics = ingestor.close().summary()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.snapshot(out / "table.snap")
    (out / "ingest_metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    _echo_config(args, out)
    print(json.dumps(metrics, sort_keys=True))
    _info(f"ingested {n} records; table at version {table.table_version}")
    return EXIT_OK


def cmd_center_bench(args) -> int:
    result = bench_cuckoo(args.ops, seed=args.seed)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
        _echo_config(args, out)
    print(f"cuckoo bench: {result['ops']} ops, "
          f"{result['insert_ops_per_s']:.0f} inserts/s, "
          f"{result['lookup_ops_per_s']:.0f} lookups/s, "
          f"p99 lookup {result['p99_lookup_ns']} ns, "
          f"max probes/lookup {result['max_probes_per_lookup']}")
    return EXIT_OK


def cmd_train_ctr(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    product_vecs = harness.product_vector_map(params, corpus)
    query_vecs = harness.query_vector_map(params, corpus)
    data_cfg = cube_mod.CtrDataConfig(n_users=args.users, events_per_user=args.events_per_user,
                                      seq_len=args.seq_len, seed=args.seed)
    train_examples = cube_mod.build_examples(corpus, product_vecs, query_vecs, data_cfg)
    eval_cfg = replace(data_cfg, n_users=max(20, args.users // 3), seed=args.seed + 90001)
    eval_examples = cube_mod.build_examples(corpus, product_vecs, query_vecs, eval_cfg)
    head = cube_mod.CubeParams.init(d_id=data_cfg.d_id, d_mm=params.dims.d_full)
    train_cfg = cube_mod.CtrTrainConfig(epochs=args.epochs, learning_rate=args.lr,
                                        seed=args.seed, use_multimodal=not args.id_only)
    head, curve = cube_mod.train_ctr(head, train_examples, train_cfg)
    auc_value = cube_mod.evaluate_auc(head, eval_examples, use_multimodal=not args.id_only)

    cube_mod.save_examples(train_examples, out / "ctr_examples.jsonl")
    preds = [(ex.example_id, cube_mod.predict_ctr(head, ex, not args.id_only))
             for ex in eval_examples]
    cube_mod.save_predictions(preds, out / "predictions.csv")
    with open(out / "logloss_curve.csv", "w") as fh:
        fh.write("batch,logloss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i},{v!r}\n")
    (out / "ctr_metrics.json").write_text(json.dumps(
        {"auc": auc_value, "examples_train": len(train_examples),
         "examples_eval": len(eval_examples), "id_only": bool(args.id_only)},
        sort_keys=True, indent=2) + "\n")
    _echo_config(args, out)
    print(f"ctr auc {auc_value:.4f} over {len(eval_examples)} held-out examples")
    return EXIT_OK


def cmd_eval_recall(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint)
    table = VersionedTable.load_snapshot(args.table) if args.table else None
    ks = tuple(int(k) for k in args.ks.split(","))
    modality = None if args.modality == "all" else args.modality
    split = None if args.split == "all" else args.split
    reports = harness.recall_suite(params, corpus, ks=ks, mode=args.mode,
                                   split=split or corpus_mod.EVAL_SPLIT,
                                   modality=modality, table=table)
    text = harness.format_recall_table(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "recall_report.csv").write_text(text)
    _echo_config(args, out)
    print(text, end="")
    return EXIT_OK


def cmd_exchange_rate(args) -> int:
    report = harness.exchange_rate((args.baseline_metric, args.baseline_auc),
                                   (args.treatment_metric, args.treatment_auc))
    payload = {"convention": harness.EXCHANGE_RATE_CONVENTION,
               "baseline_metric_pct": report.baseline_metric_pct,
               "baseline_auc": report.baseline_auc,
               "treatment_metric_pct": report.treatment_metric_pct,
               "treatment_auc": report.treatment_auc,
               "delta_metric_pct": report.delta_metric_pct,
               "delta_auc": report.delta_auc,
               "exchange_rate": report.exchange_rate}
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "exchange_rate.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        _echo_config(args, out)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    grid = tuple(float(v) for v in args.grid.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    spec = harness.SweepSpec(axis=args.axis, grid=grid, seeds=seeds)
    cfg = harness.PipelineConfig(seed=args.seed, stage1_steps=args.stage1_steps,
                                 stage2_steps=args.stage2_steps,
                                 queue_depth=args.queue_depth, ctr_users=args.ctr_users)
    triplets = None
    if args.triplets is not None:
        triplets = curation_mod.load_triplets(args.triplets, corpus)
    result = harness.run_sweep(spec, cfg, corpus=corpus, triplets=triplets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.save_sweep_csv(result, out / "sweep_results.csv")
    harness.save_sweep_summary(result, out / "sweep_summary.txt")
    _echo_config(args, out)
    print((out / "sweep_summary.txt").read_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embflow",
                                     description="multimodal embedding lifecycle at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--products", type=int, default=10_000)
    p.add_argument("--queries", type=int, default=2_000)
    p.add_argument("--categories", type=int, default=50)
    p.add_argument("--interactions", type=int, default=200_000)
    p.add_argument("--label-noise", type=float, default=0.05)
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("curate", help="dedup, merge, align, filter, attach hard negatives")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None,
                   help="scorer checkpoint; random-init encoder when omitted")
    p.add_argument("--min-entities", type=int, default=2)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", help="contrastive training, one stage")
    p.add_argument("--corpus", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=[STAGE_INFONCE, STAGE_CIRCLE], default=STAGE_INFONCE)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--shards", type=int, default=4)
    p.add_argument("--queue-depth", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-in", default=None)
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export-embeddings", help="encode all products into a table snapshot")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=["f32", "i8"], default="f32")
    p.add_argument("--view-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("center", help="representation-center maintenance")
    center_sub = p.add_subparsers(dest="center_command", required=True)

    c = center_sub.add_parser("snapshot", help="verify/convert a snapshot")
    c.add_argument("--table", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--dtype", choices=["f32", "i8"], default=None)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_center_snapshot)

    c = center_sub.add_parser("delta", help="apply delta logs to a snapshot")
    c.add_argument("--table", required=True)
    c.add_argument("--apply", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_center_delta)

    c = center_sub.add_parser("ingest", help="real-time ingest with visibility metrics")
    c.add_argument("--table", default=None)
    c.add_argument("--dim", type=int, default=128)
    c.add_argument("--dtype", choices=["f32", "i8"], default=None)
    c.add_argument("--records", required=True, help="jsonl of {key, values}")
    c.add_argument("--flush-interval", type=float, default=1.0)
    c.add_argument("--capacity", type=int, default=1024)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_center_ingest)

    c = center_sub.add_parser("bench", help="cuckoo-tier micro benchmark")
    c.add_argument("--ops", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_center_bench)

    p = sub.add_parser("train-ctr", help="train the CTR head on synthetic clicks")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=150)
    p.add_argument("--events-per-user", type=int, default=24)
    p.add_argument("--seq-len", type=int, default=100)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id-only", action="store_true",
                   help="ablation: drop all multimodal features")
    p.set_defaults(func=cmd_train_ctr)

    p = sub.add_parser("eval-recall", help="retrieval recall against corpus ground truth")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--table", default=None, help="serve candidates from this snapshot")
    p.add_argument("--ks", default="1,5,10,20,50")
    p.add_argument("--mode", choices=[TOP_K_PRECISION, HIT_RECALL], default=TOP_K_PRECISION)
    p.add_argument("--modality", choices=["image", "text", "text+image", "all"], default="image")
    p.add_argument("--split", choices=["train", "eval", "all"], default="eval")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_recall)

    p = sub.add_parser("exchange-rate", help="downstream gain per intermediate gain")
    p.add_argument("--baseline-metric", type=float, required=True,
                   help="baseline intermediate metric, in percent")
    p.add_argument("--baseline-auc", type=float, required=True)
    p.add_argument("--treatment-metric", type=float, required=True)
    p.add_argument("--treatment-auc", type=float, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_exchange_rate)

    p = sub.add_parser("sweep", help="scaling study over one axis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--axis", choices=list(harness.SWEEP_AXES), required=True)
    p.add_argument("--grid", required=True, help="comma-separated ascending values")
    p.add_argument("--seeds", default="0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--triplets", default=None)
    p.add_argument("--stage1-steps", type=int, default=150)
    p.add_argument("--stage2-steps", type=int, default=150)
    p.add_argument("--queue-depth", type=int, default=5)
    p.add_argument("--ctr-users", type=int, default=60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error category=divergence detail={exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SnapshotIntegrityError, OSError) as exc:
        print(f"error category=io detail={exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ContractViolation, DataIntegrityError, StaleDeltaError,
            UndefinedMetricError, ValueError) as exc:
        print(f"error category=invalid-input detail={exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
