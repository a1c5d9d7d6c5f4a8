"""Shared fixtures: one small trained benchmark reused across test modules."""

from __future__ import annotations

import pytest

from synattack import attack, corpus, embed, selector, synthbench, target


@pytest.fixture(scope="session")
def bench():
    cfg = synthbench.BenchmarkConfig(
        keywords_per_class=3,
        group_size=4,
        target_groups=10,
        substitute_groups=10,
        embed_dim=16,
        length_range=(8, 12),
        inject_count=1,
        seed=3,
    )
    return synthbench.build_benchmark(cfg)


@pytest.fixture(scope="session")
def small_setup(bench):
    """Trained target + substitute + synonym machinery on the small benchmark."""
    d = 16
    train = bench.target_corpus(2000)
    eval_records = bench.target_corpus(120, seed_offset=5000)
    sub_train = bench.substitute_corpus(2000)

    tvocab = corpus.build_vocab(train)
    t_enc = [corpus.encode(e, tvocab, d) for e in train]
    tcfg = target.TargetConfig(
        d=d, n_classes=2, arch="word_cnn", embed_dim=16, filters=24, epochs=5, seed=1
    )
    trained = target.train_target(t_enc, tcfg, tvocab)

    svocab = corpus.build_vocab(sub_train)
    s_enc = [corpus.encode(e, svocab, d) for e in sub_train]
    scfg = selector.SelectorConfig(
        d=d, n_classes=2, k=3, embed_dim=16, filters=24, hidden=24, epochs=5, seed=1
    )
    sub_model = selector.train_substitute(s_enc, scfg, svocab)

    table = embed.EmbeddingTable(dict(bench.vectors), source_hash="bench")
    index = embed.build_synonym_index(table, tvocab, n_syn=8, syn_threshold=0.5)
    attack_cfg = attack.AttackConfig(
        epsilon=0.85, n_syn=8, syn_threshold=0.5, ranker="explain"
    )
    return {
        "bench": bench,
        "d": d,
        "trained": trained,
        "target_vocab": tvocab,
        "sub_model": sub_model,
        "sub_vocab": svocab,
        "table": table,
        "index": index,
        "attack_cfg": attack_cfg,
        "eval_records": eval_records,
        "eval_encoded": [corpus.encode(e, tvocab, d) for e in eval_records],
    }


@pytest.fixture()
def handle(small_setup):
    return target.in_process_target(small_setup["trained"])


def keyword_set(bench) -> set[str]:
    kws: set[str] = set()
    for group in bench.target_spec.keywords:
        kws.update(group)
    return kws
