"""Substitute word-importance model: a position selector trained jointly with
an auxiliary classifier on a similar-domain corpus.

The selector emits one logit per input position; during training a relaxed
top-k mask sampled from those logits gates the token embeddings before the
auxiliary classifier predicts the label. At attack time only the raw logits
are used, so ranking the words of a sentence costs zero target queries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .corpus import EncodedExample, Vocab
from .embed import EmbeddingTable

PAD_SCORE = -1e9


@dataclass
class SelectorConfig:
    d: int
    n_classes: int
    k: int = 10
    tau: float = 0.5
    embed_dim: int = 50
    filters: int = 100
    kernel: int = 3
    conv_layers: int = 2
    hidden: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.d:
            raise ValueError(f"k must be in [1, d={self.d}], got {self.k}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd so positions stay aligned")


class SubstituteModel:
    def __init__(
        self,
        store: nn.ParamStore,
        config: SelectorConfig,
        vocab: Vocab,
        trained: bool,
        provenance: dict | None = None,
    ):
        self.store = store
        self.config = config
        self.vocab = vocab
        self.trained = trained
        self.provenance = provenance or {}


def _init_params(
    config: SelectorConfig, vocab: Vocab, table: EmbeddingTable | None
) -> nn.ParamStore:
    rng = np.random.default_rng(config.seed)
    store = nn.ParamStore(seed=config.seed)
    emb = rng.normal(0.0, 0.1, size=(len(vocab), config.embed_dim))
    if table is not None:
        if table.dim != config.embed_dim:
            raise ValueError(
                f"embedding table dim {table.dim} != configured {config.embed_dim}"
            )
        for i, tok in enumerate(vocab.itos):
            if tok in table:
                emb[i] = table.vectors[tok]
    store.declare("embedding", emb)

    in_ch = config.embed_dim
    for layer in range(config.conv_layers):
        fan_in = config.kernel * in_ch
        store.declare(
            f"sel_conv{layer}_w",
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(config.kernel, in_ch, config.filters)),
        )
        store.declare(f"sel_conv{layer}_b", np.zeros(config.filters))
        in_ch = config.filters
    store.declare(
        "sel_head_w", rng.normal(0.0, np.sqrt(2.0 / in_ch), size=(1, in_ch, 1))
    )
    store.declare("sel_head_b", np.zeros(1))

    store.declare(
        "fb_w1",
        rng.normal(0.0, np.sqrt(2.0 / config.embed_dim), size=(config.embed_dim, config.hidden)),
    )
    store.declare("fb_b1", np.zeros(config.hidden))
    store.declare(
        "fb_w2",
        rng.normal(0.0, np.sqrt(2.0 / config.hidden), size=(config.hidden, config.n_classes)),
    )
    store.declare("fb_b2", np.zeros(config.n_classes))
    return store


def _pad_penalty(lengths: np.ndarray, d: int) -> np.ndarray:
    positions = np.arange(d)[None, :]
    return np.where(positions < lengths[:, None], 0.0, PAD_SCORE)


def _selector_logits(store: nn.ParamStore, config: SelectorConfig, emb: nn.Tensor,
                     lengths: np.ndarray) -> nn.Tensor:
    same_pad = (config.kernel - 1) // 2
    h = emb
    for layer in range(config.conv_layers):
        h = nn.relu(
            nn.conv1d(h, store[f"sel_conv{layer}_w"], store[f"sel_conv{layer}_b"], pad=same_pad)
        )
    logits = nn.conv1d(h, store["sel_head_w"], store["sel_head_b"], pad=0)
    logits = nn.reshape(logits, (emb.shape[0], config.d))
    return nn.add(logits, _pad_penalty(lengths, config.d))


def _substitute_probs(store: nn.ParamStore, config: SelectorConfig, emb: nn.Tensor,
                      mask: nn.Tensor) -> nn.Tensor:
    mask3 = nn.reshape(mask, mask.shape + (1,))
    masked = nn.elementwise_mul(emb, mask3)
    pooled = nn.scale(nn.tsum(masked, axis=1), 1.0 / config.k)
    h = nn.relu(nn.dense(pooled, store["fb_w1"], store["fb_b1"]))
    return nn.softmax(nn.dense(h, store["fb_w2"], store["fb_b2"]))


def training_loss(
    store: nn.ParamStore,
    config: SelectorConfig,
    ids: np.ndarray,
    lengths: np.ndarray,
    labels: np.ndarray,
    noise: np.ndarray,
) -> nn.Tensor:
    """Joint objective: classifier cross-entropy through the sampled k-mask."""
    emb = nn.embed_lookup(store["embedding"], ids)
    logits = _selector_logits(store, config, emb, lengths)
    mask = nn.gumbel_softmax_topk_mask(logits, config.k, config.tau, noise=noise)
    probs = _substitute_probs(store, config, emb, mask)
    return nn.cross_entropy(probs, labels)


def _batch_arrays(examples: list[EncodedExample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.stack([ex.ids for ex in examples])
    lengths = np.array([ex.length for ex in examples], dtype=np.int64)
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return ids, lengths, labels


def train_substitute(
    corpus_b: list[EncodedExample],
    config: SelectorConfig,
    vocab: Vocab,
    table: EmbeddingTable | None = None,
    provenance: dict | None = None,
) -> SubstituteModel:
    """Minibatch training of selector + auxiliary classifier; deterministic per seed."""
    if not corpus_b:
        raise ValueError("substitute corpus is empty")
    labels_seen = {ex.label for ex in corpus_b}
    if labels_seen != set(range(config.n_classes)):
        raise ValueError(
            f"substitute corpus must cover all {config.n_classes} classes, "
            f"saw labels {sorted(labels_seen)}"
        )
    if any(ex.ids.shape[0] != config.d for ex in corpus_b):
        raise ValueError("substitute corpus examples were encoded with a different d")

    store = _init_params(config, vocab, table)
    model = SubstituteModel(store, config, vocab, trained=config.epochs > 0,
                            provenance=provenance)
    rng = np.random.default_rng(config.seed + 1)
    n = len(corpus_b)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            batch = [corpus_b[i] for i in order[start : start + config.batch_size]]
            ids, lengths, labels = _batch_arrays(batch)
            noise = nn.sample_gumbel(rng, (config.k, len(batch), config.d))
            store.zero_grad()
            loss = training_loss(store, config, ids, lengths, labels, noise)
            if not np.isfinite(loss.item()):
                raise nn.TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_no}"
                )
            nn.backward(loss)
            nn.adam_step(store, config.lr, config.beta1, config.beta2, config.adam_eps)
    return model


def word_scores(model: SubstituteModel, x: EncodedExample) -> np.ndarray:
    """Raw selector logits per position; PAD positions pinned to the sentinel."""
    config = model.config
    if x.ids.shape[0] != config.d:
        raise ValueError(f"example encoded with d={x.ids.shape[0]}, model expects {config.d}")
    ids = x.ids[None, :]
    lengths = np.array([x.length], dtype=np.int64)
    emb = nn.embed_lookup(model.store["embedding"], ids)
    logits = _selector_logits(model.store, config, emb, lengths)
    scores = logits.values[0].copy()
    scores[x.length :] = PAD_SCORE
    return scores


def select_topk(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest scores in rank order; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    usable = int((scores > PAD_SCORE / 2).sum())
    if k > usable:
        raise ValueError(f"k={k} exceeds the {usable} scorable positions")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return [int(i) for i in order[:k]]


def hard_topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    mask = np.zeros_like(scores)
    mask[select_topk(scores, k)] = 1.0
    return mask


def masked_classifier_accuracy(model: SubstituteModel, examples: list[EncodedExample]) -> float:
    """Auxiliary classifier accuracy under the hard top-k mask (no sampling)."""
    config = model.config
    correct = 0
    for ex in examples:
        scores = word_scores(model, ex)
        k = min(config.k, ex.length)
        mask = nn.Tensor(hard_topk_mask(scores, k)[None, :])
        emb = nn.embed_lookup(model.store["embedding"], ex.ids[None, :])
        probs = _substitute_probs(model.store, config, emb, mask)
        if int(np.argmax(probs.values[0])) == ex.label:
            correct += 1
    return correct / len(examples)


def save_substitute(path: str, model: SubstituteModel) -> None:
    meta = {
        "kind": "substitute",
        "config": asdict(model.config),
        "config_hash": nn.json_hash(asdict(model.config)),
        "vocab": model.vocab.itos,
        "trained": model.trained,
        "provenance": model.provenance,
    }
    nn.save_checkpoint(path, model.store.state_arrays(), meta)


def load_substitute(path: str) -> SubstituteModel:
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "substitute":
        raise ValueError(f"{path}: not a substitute checkpoint")
    config = SelectorConfig(**meta["config"])
    store = nn.ParamStore(seed=config.seed)
    for name, arr in arrays.items():
        store.declare(name, arr)
    return SubstituteModel(
        store,
        config,
        Vocab(meta["vocab"]),
        trained=meta["trained"],
        provenance=meta.get("provenance", {}),
    )
