"""Word embeddings, cosine geometry, synonym index, and sentence similarity.

The synonym index is precomputed once per (embedding file, vocab, breadth,
threshold) so attack-time lookups never scan the table, and it is persisted
with the hashes that identify those inputs.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .corpus import EncodedExample, Vocab

SYNONYM_INDEX_VERSION = 1


class EmbeddingError(ValueError):
    """Raised for malformed embedding files or degenerate vectors."""


class UnmeasurableSimilarity(ValueError):
    """Sentence similarity is undefined: no in-table tokens (or zero mean vector)."""


class EmbeddingTable:
    """dim plus word->vector map; unit-normalized copies cached for cosine work."""

    def __init__(self, vectors: dict[str, np.ndarray], source_hash: str = ""):
        if not vectors:
            raise EmbeddingError("embedding table is empty")
        first = next(iter(vectors.values()))
        self.dim = int(np.asarray(first).shape[0])
        self.vectors: dict[str, np.ndarray] = {}
        self.unit: dict[str, np.ndarray] = {}
        for word, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise EmbeddingError(
                    f"vector for {word!r} has dim {arr.shape}, expected ({self.dim},)"
                )
            norm = float(np.linalg.norm(arr))
            if norm == 0.0:
                raise EmbeddingError(f"zero vector for word {word!r}")
            self.vectors[word] = arr
            self.unit[word] = arr / norm
        self.source_hash = source_hash
        self._scan_words: list[str] | None = None
        self._scan_matrix: np.ndarray | None = None

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def _scan_arrays(self) -> tuple[list[str], np.ndarray]:
        # Built lazily: a dense unit matrix for full-table cosine scans.
        if self._scan_matrix is None:
            self._scan_words = sorted(self.unit)
            self._scan_matrix = np.stack([self.unit[w] for w in self._scan_words])
        return self._scan_words, self._scan_matrix


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def load_embeddings(path: str, restrict_to: Vocab | None = None) -> EmbeddingTable:
    """Read "word v1 ... v_dim" lines; dim is fixed by the first line.

    Later duplicates of a word are ignored. With restrict_to, only words of
    that vocab are kept.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingError(f"{path}:{lineno}: no vector components")
            if len(values) != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dim} components, found {len(values)}"
                )
            if restrict_to is not None and word not in restrict_to:
                continue
            if word in vectors:
                continue
            vec = np.array([float(v) for v in values], dtype=np.float64)
            if not np.linalg.norm(vec) > 0.0:
                raise EmbeddingError(f"{path}:{lineno}: zero vector for word {word!r}")
            vectors[word] = vec
    if not vectors:
        raise EmbeddingError(f"{path}: no embeddings loaded")
    return EmbeddingTable(vectors, source_hash=file_sha256(path))


def save_embeddings(path: str, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in vectors:
            comps = " ".join(f"{v:.8f}" for v in np.asarray(vectors[word]))
            fh.write(f"{word} {comps}\n")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"cosine of mismatched shapes {a.shape} and {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def nearest_synonyms(
    word: str,
    table: EmbeddingTable,
    n_syn: int = 50,
    syn_threshold: float = 0.5,
) -> list[tuple[str, float]]:
    """Exact top-n_syn neighbors by cosine over the whole table.

    The word itself is excluded; ties break alphabetically; words missing from
    the table get an empty list (the attack just skips them).
    """
    if word not in table:
        return []
    words, matrix = table._scan_arrays()
    sims = matrix @ table.unit[word]
    order = sorted(
        (i for i in range(len(words)) if words[i] != word),
        key=lambda i: (-sims[i], words[i]),
    )
    out: list[tuple[str, float]] = []
    for i in order:
        if len(out) == n_syn:
            break
        if sims[i] < syn_threshold:
            break
        out.append((words[i], float(sims[i])))
    return out


class SynonymIndex:
    """Precomputed per-word synonym lists keyed by the inputs that produced them."""

    def __init__(
        self,
        entries: dict[str, list[tuple[str, float]]],
        embedding_hash: str,
        vocab_hash: str,
        n_syn: int,
        syn_threshold: float,
    ):
        self.entries = entries
        self.embedding_hash = embedding_hash
        self.vocab_hash = vocab_hash
        self.n_syn = n_syn
        self.syn_threshold = syn_threshold

    def lookup(self, word: str) -> list[tuple[str, float]]:
        return self.entries.get(word, [])

    def save(self, path: str) -> None:
        doc = {
            "format_version": SYNONYM_INDEX_VERSION,
            "embedding_hash": self.embedding_hash,
            "vocab_hash": self.vocab_hash,
            "n_syn": self.n_syn,
            "syn_threshold": self.syn_threshold,
            "synonyms": {
                w: [[n, round(s, 8)] for n, s in self.entries[w]]
                for w in sorted(self.entries)
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "SynonymIndex":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != SYNONYM_INDEX_VERSION:
            raise EmbeddingError(
                f"{path}: unsupported synonym index version {doc.get('format_version')}"
            )
        entries = {
            w: [(n, float(s)) for n, s in pairs] for w, pairs in doc["synonyms"].items()
        }
        return cls(
            entries,
            embedding_hash=doc["embedding_hash"],
            vocab_hash=doc["vocab_hash"],
            n_syn=int(doc["n_syn"]),
            syn_threshold=float(doc["syn_threshold"]),
        )


def build_synonym_index(
    table: EmbeddingTable,
    vocab: Vocab,
    n_syn: int = 50,
    syn_threshold: float = 0.5,
) -> SynonymIndex:
    """One full-table scan per in-table vocab word; lookups afterwards are O(1)."""
    entries: dict[str, list[tuple[str, float]]] = {}
    for word in vocab.itos[2:]:
        if word in table:
            entries[word] = nearest_synonyms(word, table, n_syn, syn_threshold)
    return SynonymIndex(
        entries,
        embedding_hash=table.source_hash,
        vocab_hash=vocab.content_hash(),
        n_syn=n_syn,
        syn_threshold=syn_threshold,
    )


def mean_vector(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    in_table = [table.vectors[t] for t in tokens if t in table]
    if not in_table:
        raise UnmeasurableSimilarity("no in-table tokens")
    return np.mean(in_table, axis=0)


def sentence_similarity(
    a: EncodedExample,
    b: EncodedExample,
    table: EmbeddingTable,
    vocab: Vocab,
) -> float:
    """Cosine of mean word vectors, affinely mapped from [-1, 1] to [0, 1]."""
    va = mean_vector([vocab.token_of(int(i)) for i in a.ids[: a.length]], table)
    vb = mean_vector([vocab.token_of(int(i)) for i in b.ids[: b.length]], table)
    if np.array_equal(va, vb):
        return 1.0
    try:
        cos = cosine(va, vb)
    except EmbeddingError as exc:
        raise UnmeasurableSimilarity(str(exc)) from exc
    return (min(1.0, max(-1.0, cos)) + 1.0) / 2.0
