"""Desk-scale benchmark construction for the planted-keyword task.

The word universe is organized into tight embedding groups (one random unit
centroid per group, members jittered around it), so every word's nearest
neighbors are its group siblings. Each class plants its keywords as single
members of distinct groups; the siblings stay label-neutral and circulate as
nuisance text in the target domain, which makes "replace the keyword with a
close synonym" a real, winnable attack. The substitute domain shares the
keywords but draws its nuisance text from disjoint groups, giving the
cross-domain transfer condition.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .corpus import LabeledExample, SynthSpec, save_records, synth_generate
from .embed import save_embeddings


@dataclass
class BenchmarkConfig:
    n_classes: int = 2
    keywords_per_class: int = 4
    group_size: int = 4
    target_groups: int = 24
    substitute_groups: int = 24
    embed_dim: int = 24
    sibling_spread: float = 0.4
    length_range: tuple[int, int] = (15, 25)
    inject_count: int = 1
    seed: int = 0


@dataclass
class Benchmark:
    config: BenchmarkConfig
    target_spec: SynthSpec
    substitute_spec: SynthSpec
    vectors: dict[str, np.ndarray]

    def target_corpus(self, n: int, seed_offset: int = 0) -> list[LabeledExample]:
        spec = replace(self.target_spec, seed=self.target_spec.seed + seed_offset)
        return synth_generate(spec, n)

    def substitute_corpus(self, n: int, seed_offset: int = 0) -> list[LabeledExample]:
        spec = replace(self.substitute_spec, seed=self.substitute_spec.seed + seed_offset)
        return synth_generate(spec, n)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _group_vectors(
    rng: np.random.Generator, size: int, dim: int, spread: float
) -> list[np.ndarray]:
    centroid = _unit(rng.normal(size=dim))
    members = []
    for _ in range(size):
        direction = _unit(rng.normal(size=dim))
        members.append(_unit(np.sqrt(1.0 - spread**2) * centroid + spread * direction))
    return members


def build_benchmark(config: BenchmarkConfig) -> Benchmark:
    rng = np.random.default_rng(config.seed)
    vectors: dict[str, np.ndarray] = {}

    def make_group(name: str) -> list[str]:
        words = [f"{name}x{i}" for i in range(config.group_size)]
        for word, vec in zip(
            words, _group_vectors(rng, config.group_size, config.embed_dim,
                                  config.sibling_spread)
        ):
            vectors[word] = vec
        return words

    keywords: list[list[str]] = []
    keyword_siblings: list[str] = []
    for cls in range(config.n_classes):
        cls_keywords = []
        for i in range(config.keywords_per_class):
            group = make_group(f"key{cls}g{i}")
            cls_keywords.append(group[0])
            keyword_siblings.extend(group[1:])
        keywords.append(cls_keywords)

    target_nuisance = list(keyword_siblings)
    for g in range(config.target_groups):
        target_nuisance.extend(make_group(f"tgt{g:03d}"))
    substitute_nuisance: list[str] = []
    for g in range(config.substitute_groups):
        substitute_nuisance.extend(make_group(f"sub{g:03d}"))

    target_spec = SynthSpec(
        n_classes=config.n_classes,
        keywords=keywords,
        nuisance=target_nuisance,
        length_range=config.length_range,
        inject_count=config.inject_count,
        seed=config.seed * 7919 + 1,
        name="synthetic-target",
    )
    substitute_spec = SynthSpec(
        n_classes=config.n_classes,
        keywords=keywords,
        nuisance=substitute_nuisance,
        length_range=config.length_range,
        inject_count=config.inject_count,
        seed=config.seed * 7919 + 2,
        name="synthetic-substitute",
    )
    return Benchmark(config, target_spec, substitute_spec, vectors)


def write_benchmark(
    bench: Benchmark,
    out_dir: str,
    n_target_train: int = 1200,
    n_target_eval: int = 300,
    n_substitute: int = 1200,
) -> dict[str, str]:
    """Write corpora and embeddings; returns the path map the CLI config needs."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "target_train": os.path.join(out_dir, "target_train.jsonl"),
        "target_eval": os.path.join(out_dir, "target_eval.jsonl"),
        "substitute_train": os.path.join(out_dir, "substitute_train.jsonl"),
        "embeddings": os.path.join(out_dir, "embeddings.txt"),
    }
    save_records(paths["target_train"], bench.target_corpus(n_target_train))
    save_records(paths["target_eval"], bench.target_corpus(n_target_eval, seed_offset=5000))
    save_records(paths["substitute_train"], bench.substitute_corpus(n_substitute))
    save_embeddings(paths["embeddings"], bench.vectors)
    return paths
