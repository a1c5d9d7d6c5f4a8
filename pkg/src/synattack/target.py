"""Black-box target classifiers behind a strict query meter.

Every completed single-sentence prediction increments the meter by one and a
batch call by its size; nothing else touches it. A TargetHandle can be scoped
to give each attack a private counter over the same frozen model. The remote
adapter speaks the predict protocol (POST /predict {"text": ...} ->
{"probs": [...]}) and meters exactly like the in-process path.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

import numpy as np
import requests

from . import nn
from .corpus import CorpusError, EncodedExample, Vocab, encode_tokens, tokenize


class TransportError(RuntimeError):
    """Remote predict call failed before a prediction was produced; retriable."""


class ProtocolError(RuntimeError):
    """Remote endpoint answered with a malformed prediction payload."""


@dataclass
class Prediction:
    probs: np.ndarray
    label: int

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs=probs, label=int(np.argmax(probs)))


class QueryMeter:
    """Monotonic prediction counter; thread-safe, never decremented."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.count = 0
        self.unique_count = 0

    def add(self, n: int, unique: int | None = None) -> None:
        with self._lock:
            self.count += n
            self.unique_count += n if unique is None else unique


class TargetHandle:
    """Opaque classifier + class count + query meter.

    With cache=True identical sentences are answered from a cache: the raw
    meter still counts every call, while unique_count tracks actual model
    evaluations so reports can show both.
    """

    def __init__(
        self,
        predict_batch_fn: Callable[[list[EncodedExample]], np.ndarray],
        n_classes: int,
        cache: bool = False,
        meta: dict | None = None,
    ):
        self._predict_batch = predict_batch_fn
        self.n_classes = n_classes
        self.meter = QueryMeter()
        self.cache_enabled = cache
        self._cache: dict[tuple[int, ...], np.ndarray] = {}
        self.meta = meta or {}

    def scoped(self) -> "TargetHandle":
        """Same frozen model, fresh meter (and fresh cache scope)."""
        return TargetHandle(
            self._predict_batch, self.n_classes, cache=self.cache_enabled, meta=self.meta
        )

    def predict(self, x: EncodedExample) -> Prediction:
        return self.predict_batch([x])[0]

    def predict_batch(self, xs: list[EncodedExample]) -> list[Prediction]:
        if not xs:
            return []
        if not self.cache_enabled:
            probs = self._predict_batch(xs)
            self.meter.add(len(xs))
            return [Prediction.from_probs(p) for p in probs]

        keys = [tuple(int(i) for i in x.ids[: x.length]) for x in xs]
        missing: list[int] = []
        seen: set[tuple[int, ...]] = set()
        for i, key in enumerate(keys):
            if key not in self._cache and key not in seen:
                missing.append(i)
                seen.add(key)
        if missing:
            fresh = self._predict_batch([xs[i] for i in missing])
            for row, i in enumerate(missing):
                self._cache[keys[i]] = np.asarray(fresh[row], dtype=np.float64)
        self.meter.add(len(xs), unique=len(missing))
        return [Prediction.from_probs(self._cache[key]) for key in keys]


# ---------------------------------------------------------------------------
# desk-scale trainable targets


@dataclass
class TargetConfig:
    d: int
    n_classes: int
    arch: str = "word_cnn"
    embed_dim: int = 50
    filters: int = 100
    kernel: int = 3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 8
    batch_size: int = 32
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.arch not in ("word_cnn", "linear_bag"):
            raise ValueError(f"unknown target arch {self.arch!r}")


class TrainedTarget:
    def __init__(
        self,
        store: nn.ParamStore,
        config: TargetConfig,
        vocab: Vocab,
        holdout_accuracy: float | None = None,
    ):
        self.store = store
        self.config = config
        self.vocab = vocab
        self.holdout_accuracy = holdout_accuracy


def _init_target_params(config: TargetConfig, vocab_size: int) -> nn.ParamStore:
    rng = np.random.default_rng(config.seed)
    store = nn.ParamStore(seed=config.seed)
    store.declare("embedding", rng.normal(0.0, 0.1, size=(vocab_size, config.embed_dim)))
    if config.arch == "word_cnn":
        fan_in = config.kernel * config.embed_dim
        store.declare(
            "conv_w",
            rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(config.kernel, config.embed_dim, config.filters)),
        )
        store.declare("conv_b", np.zeros(config.filters))
        store.declare(
            "out_w",
            rng.normal(0.0, np.sqrt(2.0 / config.filters),
                       size=(config.filters, config.n_classes)),
        )
    else:
        store.declare(
            "out_w",
            rng.normal(0.0, np.sqrt(2.0 / config.embed_dim),
                       size=(config.embed_dim, config.n_classes)),
        )
    store.declare("out_b", np.zeros(config.n_classes))
    return store


def target_forward(
    store: nn.ParamStore,
    config: TargetConfig,
    ids: np.ndarray,
    lengths: np.ndarray,
) -> nn.Tensor:
    """Class probabilities [B, M] for either architecture."""
    emb = nn.embed_lookup(store["embedding"], ids)
    if config.arch == "word_cnn":
        h = nn.relu(nn.conv1d(emb, store["conv_w"], store["conv_b"], pad=0))
        pooled = nn.max_pool_over_time(h)
    else:
        keep = (np.arange(ids.shape[1])[None, :] < lengths[:, None]).astype(np.float64)
        summed = nn.tsum(nn.elementwise_mul(emb, keep[:, :, None]), axis=1)
        pooled = nn.elementwise_mul(summed, 1.0 / lengths[:, None].astype(np.float64))
    return nn.softmax(nn.dense(pooled, store["out_w"], store["out_b"]))


def _accuracy(store: nn.ParamStore, config: TargetConfig,
              examples: list[EncodedExample]) -> float:
    if not examples:
        return float("nan")
    ids = np.stack([ex.ids for ex in examples])
    lengths = np.array([ex.length for ex in examples], dtype=np.int64)
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    probs = target_forward(store, config, ids, lengths).values
    return float((probs.argmax(axis=1) == labels).mean())


def train_target(
    corpus_train: list[EncodedExample],
    config: TargetConfig,
    vocab: Vocab,
) -> TrainedTarget:
    """Train a desk-scale classifier; deterministic per seed.

    A holdout split (holdout_fraction) is carved off for the reported
    accuracy; set the fraction to 0 to train on everything.
    """
    if not corpus_train:
        raise ValueError("target training corpus is empty")
    labels_seen = {ex.label for ex in corpus_train}
    if labels_seen != set(range(config.n_classes)):
        raise ValueError(
            f"target corpus must cover all {config.n_classes} classes, "
            f"saw labels {sorted(labels_seen)}"
        )
    if any(ex.ids.shape[0] != config.d for ex in corpus_train):
        raise ValueError("target corpus examples were encoded with a different d")

    rng = np.random.default_rng(config.seed + 1)
    n = len(corpus_train)
    n_holdout = int(round(config.holdout_fraction * n)) if config.holdout_fraction > 0 else 0
    perm = rng.permutation(n)
    holdout = [corpus_train[i] for i in perm[:n_holdout]]
    train = [corpus_train[i] for i in perm[n_holdout:]]

    store = _init_target_params(config, len(vocab))
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        for batch_no, start in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            ids = np.stack([ex.ids for ex in batch])
            lengths = np.array([ex.length for ex in batch], dtype=np.int64)
            labels = np.array([ex.label for ex in batch], dtype=np.int64)
            store.zero_grad()
            probs = target_forward(store, config, ids, lengths)
            loss = nn.cross_entropy(probs, labels)
            if not np.isfinite(loss.item()):
                raise nn.TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {batch_no}"
                )
            nn.backward(loss)
            nn.adam_step(store, config.lr, config.beta1, config.beta2, config.adam_eps)

    acc = _accuracy(store, config, holdout) if holdout else None
    return TrainedTarget(store, config, vocab, holdout_accuracy=acc)


def in_process_target(trained: TrainedTarget, cache: bool = False) -> TargetHandle:
    """Metered handle over a frozen trained model."""

    def predict_batch(xs: list[EncodedExample]) -> np.ndarray:
        ids = np.stack([ex.ids for ex in xs])
        lengths = np.array([ex.length for ex in xs], dtype=np.int64)
        return target_forward(trained.store, trained.config, ids, lengths).values

    meta = {
        "arch": trained.config.arch,
        "config_hash": nn.json_hash(asdict(trained.config)),
        "d": trained.config.d,
        "vocab_hash": trained.vocab.content_hash(),
    }
    return TargetHandle(predict_batch, trained.config.n_classes, cache=cache, meta=meta)


def save_target(path: str, trained: TrainedTarget) -> None:
    meta = {
        "kind": "target",
        "config": asdict(trained.config),
        "config_hash": nn.json_hash(asdict(trained.config)),
        "vocab": trained.vocab.itos,
        "holdout_accuracy": trained.holdout_accuracy,
    }
    nn.save_checkpoint(path, trained.store.state_arrays(), meta)


def load_target(path: str) -> TrainedTarget:
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "target":
        raise ValueError(f"{path}: not a target checkpoint")
    config = TargetConfig(**meta["config"])
    store = nn.ParamStore(seed=config.seed)
    for name, arr in arrays.items():
        store.declare(name, arr)
    return TrainedTarget(store, config, Vocab(meta["vocab"]),
                         holdout_accuracy=meta.get("holdout_accuracy"))


# ---------------------------------------------------------------------------
# remote predict protocol


def remote_target(
    endpoint: str,
    n_classes: int,
    vocab: Vocab,
    timeout: float = 10.0,
    session: requests.Session | None = None,
) -> TargetHandle:
    """Handle whose predictions come from a predict-protocol endpoint.

    Only completed predictions are metered; transport failures raise
    TransportError before the meter moves.
    """
    http = session or requests.Session()
    url = endpoint.rstrip("/") + "/predict"

    def predict_one(x: EncodedExample) -> np.ndarray:
        text = " ".join(vocab.token_of(int(i)) for i in x.ids[: x.length])
        try:
            resp = http.post(url, json={"text": text}, timeout=timeout)
        except requests.RequestException as exc:
            raise TransportError(f"predict call to {url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"predict call to {url} returned {resp.status_code}")
        try:
            payload = resp.json()
            probs = np.asarray(payload["probs"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(
                f"malformed predict response: {resp.text[:200]!r}"
            ) from exc
        if probs.shape != (n_classes,) or not np.isfinite(probs).all():
            raise ProtocolError(
                f"probs must be {n_classes} finite floats, got {resp.text[:200]!r}"
            )
        if abs(float(probs.sum()) - 1.0) > 1e-6 or (probs < 0).any():
            raise ProtocolError(f"probs is not a distribution: {resp.text[:200]!r}")
        return probs

    def predict_batch(xs: list[EncodedExample]) -> np.ndarray:
        return np.stack([predict_one(x) for x in xs])

    return TargetHandle(predict_batch, n_classes, meta={"endpoint": endpoint})


class _PredictRequestHandler(BaseHTTPRequestHandler):
    trained: TrainedTarget = None  # set by make_server

    def log_message(self, fmt: str, *args) -> None:  # quiet server
        pass

    def _reply(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path != "/predict":
            self._reply(404, {"error": "unknown path"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            text = payload["text"]
            if not isinstance(text, str):
                raise ValueError("text must be a string")
        except (ValueError, KeyError) as exc:
            self._reply(400, {"error": f"bad request: {exc}"})
            return
        trained = type(self).trained
        try:
            x = encode_tokens(tokenize(text), trained.vocab, trained.config.d)
        except CorpusError as exc:
            self._reply(400, {"error": str(exc)})
            return
        probs = target_forward(
            trained.store, trained.config, x.ids[None, :],
            np.array([x.length], dtype=np.int64),
        ).values[0]
        self._reply(200, {"probs": [float(p) for p in probs]})


def make_predict_server(trained: TrainedTarget, host: str = "127.0.0.1",
                        port: int = 0) -> ThreadingHTTPServer:
    """HTTP server for the predict protocol; port 0 picks a free port."""
    handler = type("BoundPredictHandler", (_PredictRequestHandler,), {"trained": trained})
    return ThreadingHTTPServer((host, port), handler)
