#!/usr/bin/env python3
"""End-to-end demo on the planted-keyword benchmark.

Generates corpora and embeddings, trains the target classifier and the
substitute word ranker, precomputes the synonym index, attacks the evaluation
set with both rankers, and prints the combined report. Everything lands under
--out (default ./runs/synthetic-demo).
"""

import argparse
import json
import os
import sys

from synattack import cli, synthbench
from synattack.config import load_run_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/synthetic-demo")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--min-len", type=int, default=40)
    parser.add_argument("--max-len", type=int, default=60)
    parser.add_argument("--train-size", type=int, default=1500)
    parser.add_argument("--eval-cap", type=int, default=50)
    parser.add_argument("--d", type=int, default=64)
    args = parser.parse_args()

    out_dir = os.path.abspath(args.out)
    data_dir = os.path.join(out_dir, "data")
    bench = synthbench.build_benchmark(
        synthbench.BenchmarkConfig(
            keywords_per_class=4,
            group_size=4,
            target_groups=24,
            substitute_groups=24,
            embed_dim=16,
            length_range=(args.min_len, args.max_len),
            inject_count=2,
            seed=args.seed,
        )
    )
    paths = synthbench.write_benchmark(
        bench,
        data_dir,
        n_target_train=args.train_size,
        n_target_eval=max(args.eval_cap * 2, 100),
        n_substitute=args.train_size,
    )
    config = {
        "seed": args.seed,
        "n_classes": 2,
        "d": args.d,
        "paths": {**paths, "out_dir": out_dir},
        "target": {
            "arch": "word_cnn", "embed_dim": 16, "filters": 32,
            "epochs": 8, "lr": 3e-3,
        },
        "selector": {
            "k": 5, "embed_dim": 16, "filters": 32, "hidden": 32, "epochs": 5,
        },
        "attack": {
            "epsilon": 0.85, "n_syn": 8, "syn_threshold": 0.5,
            "ranker": "explain", "eval_cap": args.eval_cap,
        },
    }
    config_path = os.path.join(out_dir, "config.json")
    os.makedirs(out_dir, exist_ok=True)
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    print(f"config written to {config_path}")

    cfg = load_run_config(config_path)
    target_ckpt = cli.cmd_train_target(cfg)
    sub_ckpt = cli.cmd_train_sub(cfg)
    synonyms = cli.cmd_build_synonyms(cfg, target_ckpt)

    run_dirs = []
    for ranker in ("explain", "delete_baseline"):
        cfg_r = load_run_config(config_path, [f"attack.ranker={ranker}"])
        run_dirs.append(cli.cmd_attack(cfg_r, target_ckpt, synonyms, sub_ckpt))

    print()
    cli.cmd_report([os.path.join(r, "metrics.json") for r in run_dirs], "markdown", None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
