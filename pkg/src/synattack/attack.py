"""Greedy synonym-replacement attack loop with exact query accounting.

Word order comes from a pluggable ranker: the learned substitute selector
(zero target queries) or the leave-one-out deletion baseline (n + 1 queries
for an n-word sentence). The per-word inner loop is shared: query every
candidate, return the highest-similarity label-flipping candidate if one
exists, otherwise keep the candidate with the weakest true-class probability
and move to the next word.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import EncodedExample, Vocab, decode, encode_tokens
from .embed import (
    EmbeddingTable,
    SynonymIndex,
    UnmeasurableSimilarity,
    sentence_similarity,
)
from .selector import SubstituteModel, word_scores
from .target import Prediction, TargetHandle

# Function words never proposed for replacement; swapping them wrecks grammar
# without moving meaning. Override through AttackConfig.stop_words.
DEFAULT_STOP_WORDS = frozenset(
    """a an the and or but if then than so nor as at by for in of on to up
    with from into over under is are was were be been being am do does did
    have has had it its this that these those he she they we you i me him
    her them us my your his their our not no yes will would can could may
    might shall should must 's 't 're 've 'll 'd""".split()
)

RANKERS = ("explain", "delete_baseline")


@dataclass
class AttackConfig:
    epsilon: float = 0.85
    n_syn: int = 50
    syn_threshold: float = 0.5
    ranker: str = "explain"
    stop_words: frozenset[str] = DEFAULT_STOP_WORDS

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.ranker not in RANKERS:
            raise ValueError(f"ranker must be one of {RANKERS}, got {self.ranker!r}")
        self.stop_words = frozenset(self.stop_words)


@dataclass
class PerturbStep:
    word_index: int
    original_word: str
    chosen_synonym: str
    similarity: float | None
    prob_after: float


@dataclass
class AttackResult:
    original: EncodedExample
    adversarial: EncodedExample | None
    success: bool
    queries_used: int
    perturbed_word_count: int
    y_true: int
    trace: list[PerturbStep] = field(default_factory=list)
    failure_reason: str | None = None


def rank_words_explain(
    model: SubstituteModel,
    tokens: list[str],
    stop_words: frozenset[str] = DEFAULT_STOP_WORDS,
) -> list[int]:
    """Positions ordered by selector score desc (ties to the lower index);
    stop words are excluded. Costs zero target queries."""
    encoded = encode_tokens(tokens, model.vocab, model.config.d)
    scores = word_scores(model, encoded)
    keep = [i for i in range(encoded.length) if tokens[i] not in stop_words]
    return sorted(keep, key=lambda i: (-scores[i], i))


def rank_words_delete(
    handle: TargetHandle,
    x: EncodedExample,
    vocab: Vocab,
    stop_words: frozenset[str] = DEFAULT_STOP_WORDS,
) -> list[int]:
    """Leave-one-out importance: score_i = F_y(x) - F_y(x without word i).

    Costs exactly x.length + 1 queries. A one-word sentence falls back to UNK
    substitution so the probe sentence stays non-empty.
    """
    tokens = decode(x, vocab)
    n = x.length
    d = x.ids.shape[0]
    base = handle.predict(x)
    probes: list[EncodedExample] = []
    for i in range(n):
        reduced = tokens[:i] + tokens[i + 1 :]
        if not reduced:
            reduced = ["<unk>"]
        probes.append(encode_tokens(reduced, vocab, d, label=x.label))
    preds = handle.predict_batch(probes)
    scores = [float(base.probs[x.label] - p.probs[x.label]) for p in preds]
    keep = [i for i in range(n) if tokens[i] not in stop_words]
    return sorted(keep, key=lambda i: (-scores[i], i))


def candidate_sentences(
    x_adv: EncodedExample,
    j: int,
    original_word: str,
    index: SynonymIndex,
    vocab: Vocab,
) -> list[tuple[str, EncodedExample]]:
    """One candidate per synonym of the original word at position j; each
    differs from the current sentence at exactly that position."""
    if not 0 <= j < x_adv.length:
        raise ValueError(f"position {j} outside sentence of length {x_adv.length}")
    out = []
    for synonym, _sim in index.lookup(original_word):
        ids = x_adv.ids.copy()
        ids[j] = vocab.id_of(synonym)
        out.append(
            (synonym, EncodedExample(ids=ids, length=x_adv.length, label=x_adv.label))
        )
    return out


def is_valid_adv(
    x: EncodedExample,
    candidate: EncodedExample,
    pred: Prediction,
    y_true: int,
    epsilon: float,
    table: EmbeddingTable,
    vocab: Vocab,
) -> tuple[bool, str]:
    """Valid iff the target label moved off the ground truth AND similarity to
    the original sentence is at least epsilon (inclusive)."""
    if pred.label == y_true:
        return False, "label_unchanged"
    try:
        sim = sentence_similarity(x, candidate, table, vocab)
    except UnmeasurableSimilarity:
        return False, "unmeasurable_similarity"
    if sim >= epsilon:
        return True, "ok"
    return False, "similarity_below_threshold"


def _hamming(a: EncodedExample, b: EncodedExample) -> int:
    return int((a.ids != b.ids).sum())


def attack_one(
    x: EncodedExample,
    y_true: int,
    orig_probs: np.ndarray,
    handle: TargetHandle,
    rank_fn: Callable[[list[str], EncodedExample], list[int]],
    index: SynonymIndex,
    table: EmbeddingTable,
    vocab: Vocab,
    config: AttackConfig,
) -> AttackResult:
    """Run the greedy attack on one sentence.

    orig_probs is the target's distribution on x, supplied by the caller (the
    clean-accuracy pass already computed it), so queries_used is exactly the
    meter delta of this call: ranking queries (delete baseline only) plus one
    query per candidate sentence.
    """
    meter_start = handle.meter.count
    tokens = decode(x, vocab)
    ranked = rank_fn(tokens, x)

    x_adv = x
    prob_cur = float(np.asarray(orig_probs)[y_true])
    trace: list[PerturbStep] = []

    for j in ranked:
        cands = candidate_sentences(x_adv, j, tokens[j], index, vocab)
        if not cands:
            continue
        preds = handle.predict_batch([c for _, c in cands])

        best_valid: tuple[float, int] | None = None  # (sim, candidate position)
        for pos, (pred, (_syn, cand)) in enumerate(zip(preds, cands)):
            valid, _reason = is_valid_adv(x, cand, pred, y_true, config.epsilon, table, vocab)
            if valid:
                sim = sentence_similarity(x, cand, table, vocab)
                if best_valid is None or sim > best_valid[0]:
                    best_valid = (sim, pos)
        if best_valid is not None:
            sim, pos = best_valid
            syn, cand = cands[pos]
            trace.append(
                PerturbStep(j, tokens[j], syn, sim, float(preds[pos].probs[y_true]))
            )
            return AttackResult(
                original=x,
                adversarial=cand,
                success=True,
                queries_used=handle.meter.count - meter_start,
                perturbed_word_count=_hamming(x, cand),
                y_true=y_true,
                trace=trace,
            )

        fy = np.array([float(p.probs[y_true]) for p in preds])
        pos = int(np.argmin(fy))
        if fy[pos] < prob_cur:
            syn, cand = cands[pos]
            try:
                sim = sentence_similarity(x, cand, table, vocab)
            except UnmeasurableSimilarity:
                sim = None
            x_adv = cand
            prob_cur = float(fy[pos])
            trace.append(PerturbStep(j, tokens[j], syn, sim, prob_cur))

    return AttackResult(
        original=x,
        adversarial=None,
        success=False,
        queries_used=handle.meter.count - meter_start,
        perturbed_word_count=_hamming(x, x_adv),
        y_true=y_true,
        trace=trace,
        failure_reason="word_list_exhausted",
    )


def make_rank_fn(
    config: AttackConfig,
    handle: TargetHandle,
    vocab: Vocab,
    model: SubstituteModel | None,
) -> Callable[[list[str], EncodedExample], list[int]]:
    """Bind the configured ranker to a (tokens, encoded) -> indices callable."""
    if config.ranker == "explain":
        if model is None:
            raise ValueError("explain ranker needs a substitute model")
        return lambda tokens, x: rank_words_explain(model, tokens, config.stop_words)
    return lambda tokens, x: rank_words_delete(handle, x, vocab, config.stop_words)
