"""Minimal reverse-mode autodiff over dense numpy arrays.

Just enough machinery for the three networks in this repo (word-CNN,
bag-of-embeddings linear model, selector + auxiliary classifier): a Tensor
with a recorded backward closure, the layer ops, Adam, relaxed top-k mask
sampling, and a deterministic checkpoint format. Float64 end to end so
finite-difference gradient checks are meaningful at 1e-4 relative error.
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"SYNATK01\n"


class ShapeError(ValueError):
    """Operands fed to an op do not have compatible shapes."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient aborted training."""


class Tensor:
    """Dense float64 array plus an optional recorded backward closure."""

    __slots__ = ("values", "grad", "parents", "_backward")

    def __init__(
        self,
        values,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate .grad over the recorded graph, seeding the scalar loss with 1."""
    if loss._backward is None and not loss.parents:
        raise RuntimeError("backward called without a recorded forward graph")
    if loss.values.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_vals = a.values + b.values

    def bwd(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_vals, (a, b), bwd)


def elementwise_mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_vals = a.values * b.values

    def bwd(g: np.ndarray) -> None:
        a.accumulate(_unbroadcast(g * b.values, a.shape))
        b.accumulate(_unbroadcast(g * a.values, b.shape))

    return Tensor(out_vals, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    def bwd(g: np.ndarray) -> None:
        a.accumulate(g * s)

    return Tensor(a.values * s, (a,), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on exact ties the gradient routes to the first operand."""
    if a.shape != b.shape:
        raise ShapeError(f"maximum of mismatched shapes {a.shape} and {b.shape}")
    take_a = a.values >= b.values
    out_vals = np.where(take_a, a.values, b.values)

    def bwd(g: np.ndarray) -> None:
        a.accumulate(np.where(take_a, g, 0.0))
        b.accumulate(np.where(take_a, 0.0, g))

    return Tensor(out_vals, (a, b), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def bwd(g: np.ndarray) -> None:
        a.accumulate(np.where(mask, g, 0.0))

    return Tensor(np.where(mask, a.values, 0.0), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = a.shape

    def bwd(g: np.ndarray) -> None:
        a.accumulate(g.reshape(old_shape))

    return Tensor(a.values.reshape(shape), (a,), bwd)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def bwd(g: np.ndarray) -> None:
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(ge, a.shape).copy())

    return Tensor(a.values.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.values.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# layer ops


def embed_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [V, E] table for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.values.ndim != 2:
        raise ShapeError(f"embed_lookup table must be [V, E], got {table.shape}")
    out_vals = table.values[ids]

    def bwd(g: np.ndarray) -> None:
        if table.grad is None:
            table.grad = np.zeros_like(table.values)
        np.add.at(table.grad, ids.ravel(), g.reshape(-1, table.shape[1]))

    return Tensor(out_vals, (table,), bwd)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., n] @ w[n, m] (+ b[m]); leading axes pass through."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    out_vals = x.values @ w.values
    if b is not None:
        out_vals = out_vals + b.values
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g: np.ndarray) -> None:
        x2 = x.values.reshape(-1, w.shape[0])
        g2 = g.reshape(-1, w.shape[1])
        x.accumulate((g2 @ w.values.T).reshape(x.shape))
        w.accumulate(x2.T @ g2)
        if b is not None:
            b.accumulate(g2.sum(axis=0))

    return Tensor(out_vals, parents, bwd)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, pad: int = 0) -> Tensor:
    """Cross-correlation over the time axis: x[B, L, E], w[K, E, F] -> [B, L', F].

    pad=0 gives valid convolution with L' = L - K + 1; pad=(K-1)//2 with odd K
    preserves length.
    """
    if x.values.ndim != 3 or w.values.ndim != 3:
        raise ShapeError(f"conv1d expects x[B,L,E], w[K,E,F]; got {x.shape}, {w.shape}")
    k, e, f = w.shape
    if x.shape[2] != e:
        raise ShapeError(f"conv1d: channel mismatch between x {x.shape} and w {w.shape}")
    xp = x.values if pad == 0 else np.pad(x.values, ((0, 0), (pad, pad), (0, 0)))
    bsz, lp, _ = xp.shape
    out_len = lp - k + 1
    if out_len < 1:
        raise ShapeError(f"conv1d: input length {x.shape[1]} too short for kernel {k}")
    # im2col: windows [B, out_len, K*E]
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    cols = windows.transpose(0, 1, 3, 2).reshape(bsz, out_len, k * e)
    wf = w.values.reshape(k * e, f)
    out_vals = cols @ wf
    if b is not None:
        out_vals = out_vals + b.values
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g: np.ndarray) -> None:
        g2 = g.reshape(-1, f)
        w.accumulate((cols.reshape(-1, k * e).T @ g2).reshape(k, e, f))
        if b is not None:
            b.accumulate(g2.sum(axis=0))
        dcols = (g @ wf.T).reshape(bsz, out_len, k, e)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, kk : kk + out_len, :] += dcols[:, :, kk, :]
        x.accumulate(gxp if pad == 0 else gxp[:, pad : pad + x.shape[1], :])

    return Tensor(out_vals, parents, bwd)


def max_pool_over_time(x: Tensor) -> Tensor:
    """Max over the time axis: [B, L, F] -> [B, F]; first argmax wins ties."""
    if x.values.ndim != 3:
        raise ShapeError(f"max_pool_over_time expects [B, L, F], got {x.shape}")
    arg = x.values.argmax(axis=1)
    out_vals = np.take_along_axis(x.values, arg[:, None, :], axis=1)[:, 0, :]

    def bwd(g: np.ndarray) -> None:
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        x.accumulate(gx)

    return Tensor(out_vals, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Row-stabilized softmax over the last axis."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    s = ex / ex.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        x.accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return Tensor(s, (x,), bwd)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[label]; a single distribution takes an int label.

    Probabilities below 1e-12 are floored before the log (gradient is zero
    there), so saturated softmax outputs cannot produce NaN.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p = probs.values if probs.values.ndim == 2 else probs.values[None, :]
    if labels.shape[0] != p.shape[0]:
        raise ShapeError(f"cross_entropy: {p.shape[0]} rows but {labels.shape[0]} labels")
    rows = np.arange(p.shape[0])
    picked = p[rows, labels]
    clamped = np.maximum(picked, LOG_FLOOR)
    out = -np.log(clamped).mean()

    def bwd(g: np.ndarray) -> None:
        gp = np.zeros_like(p)
        live = picked >= LOG_FLOOR
        gp[rows[live], labels[live]] = -float(g) / (clamped[live] * p.shape[0])
        probs.accumulate(gp.reshape(probs.shape))

    return Tensor(out, (probs,), bwd)


# ---------------------------------------------------------------------------
# relaxed top-k selection


def sample_gumbel(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    u = np.clip(rng.random(shape), LOG_FLOOR, 1.0 - LOG_FLOOR)
    return -np.log(-np.log(u))


def gumbel_softmax_topk_mask(
    logits: Tensor,
    k: int,
    tau: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Relaxed k-hot mask: elementwise max of k tempered Gumbel-Softmax samples.

    logits may be [d] or [B, d]; the mask matches that shape with entries in
    (0, 1) and is differentiable w.r.t. logits. Pass `noise` (shape
    [k, *logits.shape]) to freeze the Gumbel draws, e.g. for gradient checks.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    d = logits.shape[-1]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    if noise is None:
        if rng is None:
            raise ValueError("provide an rng or frozen noise")
        noise = sample_gumbel(rng, (k,) + logits.shape)
    elif noise.shape != (k,) + logits.shape:
        raise ShapeError(f"noise shape {noise.shape} != {(k,) + logits.shape}")

    mask: Tensor | None = None
    for i in range(k):
        sample = softmax(scale(add(logits, noise[i]), 1.0 / tau))
        mask = sample if mask is None else maximum(mask, sample)
    return mask


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParamStore:
    """Named parameters with Adam moments and a step counter."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.seed = seed

    def declare(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already declared")
        t = Tensor(np.asarray(values, dtype=np.float64))
        self.params[name] = t
        self.m[name] = np.zeros_like(t.values)
        self.v[name] = np.zeros_like(t.values)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def names(self) -> list[str]:
        return sorted(self.params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].values for name in self.names()}


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam; parameters with no gradient are untouched."""
    store.step += 1
    t = store.step
    for name in store.names():
        p = store.params[name]
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Deterministic binary checkpoint: magic, JSON header, raw C-order bytes.

    Identical arrays + meta produce byte-identical files, so checkpoint hashes
    double as reproducibility checks.
    """
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": 1, "meta": meta, "params": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version")
        body = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def json_hash(obj) -> str:
    """Short stable hash of a JSON-serializable object (canonical form)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def checkpoint_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def finite_difference_gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
) -> float:
    """Max norm-wise relative error between backprop and central differences.

    loss_fn must be deterministic (freeze any sampling noise before calling).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.values)) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = np.zeros_like(p.values)
        flat = p.values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            dn = loss_fn().item()
            flat[i] = orig
            gn.ravel()[i] = (up - dn) / (2.0 * h)
        denom = max(float(np.linalg.norm(ga)) + float(np.linalg.norm(gn)), 1e-12)
        worst = max(worst, float(np.linalg.norm(ga - gn)) / denom)
    return worst
