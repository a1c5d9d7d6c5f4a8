"""End-to-end driver: train targets and substitutes, build synonym indices,
run metered attacks, and render reports from one JSON config.

Exit codes: 0 success, 1 validation problem (bad config, missing or
mismatched artifacts), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

from . import metrics as metrics_mod
from . import nn
from .attack import AttackConfig, AttackResult, attack_one, make_rank_fn
from .config import RunConfig, ValidationError, load_run_config, require_file
from .corpus import Vocab, build_vocab, decode, encode, file_records_hash, load_records
from .embed import EmbeddingTable, SynonymIndex, build_synonym_index, load_embeddings
from .selector import load_substitute, save_substitute, train_substitute
from .target import (
    TrainedTarget,
    in_process_target,
    load_target,
    make_predict_server,
    save_target,
    train_target,
)

TRACE_SCHEMA_VERSION = 1


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.paths.out_dir, exist_ok=True)
    return os.path.join(cfg.paths.out_dir, name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_target(cfg: RunConfig) -> str:
    path = require_file(cfg.paths.target_train, "target training corpus")
    records = load_records(path, n_classes=cfg.n_classes)
    vocab = build_vocab(records, cfg.min_count)
    encoded = [encode(ex, vocab, cfg.d) for ex in records]
    trained = train_target(encoded, cfg.target, vocab)
    ckpt = _out_path(cfg, f"target-{nn.json_hash(asdict(cfg.target))}.ckpt")
    save_target(ckpt, trained)
    acc = trained.holdout_accuracy
    summary = (
        f"target arch={cfg.target.arch} seed={cfg.seed} "
        f"holdout_accuracy={'n/a' if acc is None else f'{acc:.4f}'} checkpoint={ckpt}"
    )
    with open(ckpt.replace(".ckpt", ".summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return ckpt


def cmd_train_sub(cfg: RunConfig) -> str:
    path = require_file(cfg.paths.substitute_train, "substitute training corpus")
    records = load_records(path, n_classes=cfg.n_classes)
    vocab = build_vocab(records, cfg.min_count)
    encoded = [encode(ex, vocab, cfg.d) for ex in records]
    table = None
    if cfg.paths.embeddings:
        table = load_embeddings(require_file(cfg.paths.embeddings, "embeddings"), vocab)
        if table.dim != cfg.selector.embed_dim:
            raise ValidationError(
                f"embeddings dim {table.dim} != selector.embed_dim {cfg.selector.embed_dim}"
            )
    provenance = {
        "substitute_data": os.path.basename(path),
        "substitute_data_hash": file_records_hash(path),
        "seed": cfg.seed,
        "epochs": cfg.selector.epochs,
    }
    model = train_substitute(encoded, cfg.selector, vocab, table, provenance)
    ckpt = _out_path(cfg, f"substitute-{nn.json_hash(asdict(cfg.selector))}.ckpt")
    save_substitute(ckpt, model)
    print(f"substitute k={cfg.selector.k} seed={cfg.seed} checkpoint={ckpt}")
    return ckpt


def cmd_build_synonyms(cfg: RunConfig, target_ckpt: str) -> str:
    trained = load_target(require_file(target_ckpt, "target checkpoint"))
    table = load_embeddings(
        require_file(cfg.paths.embeddings, "embeddings"), trained.vocab
    )
    index = build_synonym_index(
        table, trained.vocab, cfg.attack.n_syn, cfg.attack.syn_threshold
    )
    key = nn.json_hash(
        {
            "embedding_hash": index.embedding_hash,
            "vocab_hash": index.vocab_hash,
            "n_syn": index.n_syn,
            "syn_threshold": index.syn_threshold,
        }
    )
    path = _out_path(cfg, f"synonyms-{key}.json")
    index.save(path)
    print(f"synonym index words={len(index.entries)} file={path}")
    return path


def _validate_attack_inputs(
    cfg: RunConfig,
    trained: TrainedTarget,
    sub_model,
    index: SynonymIndex,
    table: EmbeddingTable,
) -> None:
    if trained.config.d != cfg.d:
        raise ValidationError(
            f"target checkpoint was trained with d={trained.config.d}, config says {cfg.d}"
        )
    if trained.config.n_classes != cfg.n_classes:
        raise ValidationError("target checkpoint class count differs from config")
    if sub_model is not None and sub_model.config.d != cfg.d:
        raise ValidationError(
            f"substitute checkpoint has d={sub_model.config.d}, config says {cfg.d}"
        )
    if index.vocab_hash != trained.vocab.content_hash():
        raise ValidationError("synonym index was built for a different target vocab")
    if index.embedding_hash != table.source_hash:
        raise ValidationError("synonym index was built from a different embedding file")
    if index.n_syn != cfg.attack.n_syn or index.syn_threshold != cfg.attack.syn_threshold:
        raise ValidationError(
            "synonym index breadth/threshold differ from the attack config"
        )


def cmd_attack(
    cfg: RunConfig,
    target_ckpt: str,
    synonyms_path: str,
    substitute_ckpt: str | None = None,
) -> str:
    trained = load_target(require_file(target_ckpt, "target checkpoint"))
    sub_model = None
    if cfg.attack.ranker == "explain":
        if not substitute_ckpt:
            raise ValidationError("ranker=explain needs a substitute checkpoint")
        sub_model = load_substitute(require_file(substitute_ckpt, "substitute checkpoint"))
    index = SynonymIndex.load(require_file(synonyms_path, "synonym index"))
    table = load_embeddings(require_file(cfg.paths.embeddings, "embeddings"), trained.vocab)
    _validate_attack_inputs(cfg, trained, sub_model, index, table)

    eval_path = require_file(cfg.paths.target_eval, "evaluation corpus")
    records = load_records(eval_path, n_classes=cfg.n_classes)[: cfg.attack.eval_cap]
    vocab = trained.vocab
    eval_set = [encode(ex, vocab, cfg.d) for ex in records]

    handle = in_process_target(trained, cache=cfg.attack.cache)
    attack_cfg = AttackConfig(
        epsilon=cfg.attack.epsilon,
        n_syn=cfg.attack.n_syn,
        syn_threshold=cfg.attack.syn_threshold,
        ranker=cfg.attack.ranker,
    )

    clean_handle = handle.scoped()
    clean_preds = clean_handle.predict_batch(eval_set)
    clean_correct = [p.label == ex.label for p, ex in zip(clean_preds, eval_set)]
    attacked = [
        (i, ex, clean_preds[i].probs)
        for i, ex in enumerate(eval_set)
        if clean_correct[i]
    ]

    def run_one(item) -> tuple[int, AttackResult]:
        i, ex, orig_probs = item
        scope = handle.scoped()
        rank_fn = make_rank_fn(attack_cfg, scope, vocab, sub_model)
        result = attack_one(
            ex, ex.label, orig_probs, scope, rank_fn, index, table, vocab, attack_cfg
        )
        return i, result

    if cfg.attack.workers == 1:
        outcomes = [run_one(item) for item in attacked]
    else:
        with ThreadPoolExecutor(max_workers=cfg.attack.workers) as pool:
            outcomes = list(pool.map(run_one, attacked))
    results = [r for _, r in outcomes]

    run_id = f"{cfg.attack.ranker}-{cfg.config_hash()}"
    run_dir = _out_path(cfg, f"attack-{run_id}")
    os.makedirs(run_dir, exist_ok=True)

    with open(os.path.join(run_dir, "trace.jsonl"), "w", encoding="utf-8") as fh:
        for (i, result) in outcomes:
            record = _trace_record(i, result, vocab)
            record["config_hash"] = cfg.config_hash()
            record["seed"] = cfg.seed
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    provenance = {
        "ranker": cfg.attack.ranker,
        "substitute_data": (
            sub_model.provenance.get("substitute_data", "") if sub_model else ""
        ),
        "epsilon": cfg.attack.epsilon,
        "k": cfg.selector.k if sub_model else "",
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
    report = metrics_mod.aggregate(results, clean_correct, provenance)
    with open(os.path.join(run_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(run_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_mod.render_report([report], "csv"))
    with open(os.path.join(run_dir, "report.md"), "w", encoding="utf-8") as fh:
        fh.write(metrics_mod.render_report([report], "markdown"))

    print(
        f"attack ranker={cfg.attack.ranker} attacked={report.n_attacked} "
        f"successes={report.n_successes} clean_acc={report.clean_acc:.2f} "
        f"adv_acc={report.adv_acc:.2f} avg_queries={report.avg_queries:.1f} "
        f"qe={'' if report.qe is None else f'{report.qe:.3f}'} out={run_dir}"
    )
    return run_dir


def _trace_record(i: int, result: AttackResult, vocab: Vocab) -> dict:
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "example_index": i,
        "y_true": result.y_true,
        "original_text": " ".join(decode(result.original, vocab)),
        "adversarial_text": (
            " ".join(decode(result.adversarial, vocab)) if result.success else None
        ),
        "success": result.success,
        "queries_used": result.queries_used,
        "perturbed_word_count": result.perturbed_word_count,
        "failure_reason": result.failure_reason,
        "steps": [
            {
                "word_index": s.word_index,
                "original_word": s.original_word,
                "chosen_synonym": s.chosen_synonym,
                "similarity": s.similarity,
                "prob_after": s.prob_after,
            }
            for s in result.trace
        ],
    }


def cmd_report(metrics_paths: list[str], fmt: str, out: str | None) -> str:
    reports = []
    for path in metrics_paths:
        with open(require_file(path, "metrics file"), encoding="utf-8") as fh:
            doc = json.load(fh)
        reports.append(metrics_mod.MetricsReport(**doc))
    text = metrics_mod.render_report(reports, fmt)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def cmd_serve_target(cfg: RunConfig, target_ckpt: str, host: str, port: int) -> None:
    trained = load_target(require_file(target_ckpt, "target checkpoint"))
    server = make_predict_server(trained, host, port)
    print(f"serving predict protocol on http://{server.server_address[0]}:"
          f"{server.server_address[1]}/predict")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synattack",
        description="Query-metered synonym-substitution attacks on text classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument(
            "-o",
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (dotted path, e.g. attack.ranker=explain)",
        )

    add_common(sub.add_parser("train-target", help="train the target classifier"))
    add_common(sub.add_parser("train-sub", help="train the substitute word ranker"))

    p = sub.add_parser("build-synonyms", help="precompute the synonym index")
    add_common(p)
    p.add_argument("--target-ckpt", required=True)

    p = sub.add_parser("attack", help="attack the evaluation set and write reports")
    add_common(p)
    p.add_argument("--target-ckpt", required=True)
    p.add_argument("--synonyms", required=True)
    p.add_argument("--substitute-ckpt", default=None)

    p = sub.add_parser("report", help="render metrics.json files as a table")
    p.add_argument("metrics", nargs="+", help="metrics.json files")
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve-target", help="serve the predict protocol over HTTP")
    add_common(p)
    p.add_argument("--target-ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8100)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.metrics, args.format, args.out)
            return 0
        cfg = load_run_config(args.config, args.override)
        if args.command == "train-target":
            cmd_train_target(cfg)
        elif args.command == "train-sub":
            cmd_train_sub(cfg)
        elif args.command == "build-synonyms":
            cmd_build_synonyms(cfg, args.target_ckpt)
        elif args.command == "attack":
            cmd_attack(cfg, args.target_ckpt, args.synonyms, args.substitute_ckpt)
        elif args.command == "serve-target":
            cmd_serve_target(cfg, args.target_ckpt, args.host, args.port)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
