"""Corpus loading, tokenization, encoding, and synthetic corpus generation.

Corpora are JSON-lines files with one record per line carrying a "text"
string and an integer "label" (field names are configurable). Sentences are
encoded to fixed-length id vectors over a frequency-ordered vocabulary with
reserved PAD/UNK slots.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

# Word tokens, apostrophe-led clitics ("'s", "'t"), then single punctuation marks.
_TOKEN_RE = re.compile(r"'\w+|\w+|[^\w\s]")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus construction."""


@dataclass
class LabeledExample:
    text: str
    label: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError("example text is empty after whitespace trim")
        if self.label < 0:
            raise CorpusError(f"negative label {self.label}")


@dataclass(eq=False)
class EncodedExample:
    """Fixed-length id vector: ids[i] == PAD_ID exactly for i >= length."""

    ids: np.ndarray
    length: int
    label: int

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.length < 1:
            raise CorpusError("encoded example must contain at least one token")


class Vocab:
    """token<->id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, itos: list[str]):
        if itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise CorpusError("vocab must reserve PAD and UNK as ids 0 and 1")
        self.itos = list(itos)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.itos[idx]

    def content_hash(self) -> str:
        h = hashlib.sha256("\n".join(self.itos).encode("utf-8"))
        return h.hexdigest()[:16]


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word/clitic/punctuation tokens.

    "Good movie!" -> ["good", "movie", "!"]; "it's fine" -> ["it", "'s", "fine"].
    """
    return _TOKEN_RE.findall(text.lower())


def load_records(
    path: str,
    text_field: str = "text",
    label_field: str = "label",
    n_classes: int | None = None,
) -> list[LabeledExample]:
    """Parse a JSON-lines corpus file in file order.

    Malformed lines and out-of-range labels raise CorpusError naming the line.
    """
    records: list[LabeledExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(obj, dict) or text_field not in obj or label_field not in obj:
                raise CorpusError(
                    f"{path}:{lineno}: record must carry fields "
                    f"{text_field!r} and {label_field!r}"
                )
            label = obj[label_field]
            if not isinstance(label, int) or isinstance(label, bool):
                raise CorpusError(f"{path}:{lineno}: label {label!r} is not an integer")
            if n_classes is not None and not 0 <= label < n_classes:
                raise CorpusError(
                    f"{path}:{lineno}: unknown label {label} (expected 0..{n_classes - 1})"
                )
            try:
                records.append(LabeledExample(text=str(obj[text_field]), label=label))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_records(path: str, examples: list[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label}) + "\n")


def file_records_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def build_vocab(corpus: list[LabeledExample], min_count: int = 1) -> Vocab:
    """Frequency-thresholded vocab; order (count desc, token asc) for stable ids."""
    if not corpus:
        raise CorpusError("cannot build a vocab from an empty corpus")
    counts = Counter()
    for ex in corpus:
        counts.update(tokenize(ex.text))
    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def encode_tokens(tokens: list[str], vocab: Vocab, d: int, label: int = -1) -> EncodedExample:
    if d < 1:
        raise CorpusError(f"max length d must be >= 1, got {d}")
    if not tokens:
        raise CorpusError("cannot encode an empty token list")
    ids = np.full(d, PAD_ID, dtype=np.int64)
    length = min(len(tokens), d)
    for i in range(length):
        ids[i] = vocab.id_of(tokens[i])
    return EncodedExample(ids=ids, length=length, label=label)


def encode(ex: LabeledExample, vocab: Vocab, d: int) -> EncodedExample:
    """Tokenize, map OOV to UNK, truncate at d, right-pad with PAD."""
    return encode_tokens(tokenize(ex.text), vocab, d, label=ex.label)


def decode(encoded: EncodedExample, vocab: Vocab) -> list[str]:
    """Tokens of the non-PAD prefix (OOV appears as the UNK token string)."""
    return [vocab.token_of(int(i)) for i in encoded.ids[: encoded.length]]


@dataclass
class SynthSpec:
    """Generator spec for planted-keyword corpora.

    Every sentence is nuisance tokens plus `inject_count` keywords drawn from
    exactly one class's keyword set, so the label is recoverable by keyword
    lookup alone.
    """

    n_classes: int
    keywords: list[list[str]]
    nuisance: list[str]
    length_range: tuple[int, int] = (15, 25)
    inject_count: int = 1
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self) -> None:
        if len(self.keywords) != self.n_classes:
            raise CorpusError("need one keyword set per class")
        seen: set[str] = set()
        for kws in self.keywords:
            kwset = set(kws)
            if not kwset:
                raise CorpusError("keyword sets must be non-empty")
            if kwset & seen:
                raise CorpusError(f"keyword sets overlap: {sorted(kwset & seen)}")
            seen |= kwset
        overlap = seen & set(self.nuisance)
        if overlap:
            raise CorpusError(f"nuisance vocabulary overlaps keywords: {sorted(overlap)}")
        lo, hi = self.length_range
        if not 1 <= self.inject_count <= lo:
            raise CorpusError("inject_count must fit in the shortest sentence")
        if lo > hi:
            raise CorpusError("length_range must be (min, max) with min <= max")


def synth_generate(spec: SynthSpec, n_sentences: int) -> list[LabeledExample]:
    """Draw a reproducible corpus: uniform class choice, keywords at random slots."""
    rng = random.Random(spec.seed)
    out: list[LabeledExample] = []
    for _ in range(n_sentences):
        label = rng.randrange(spec.n_classes)
        length = rng.randint(*spec.length_range)
        tokens = [rng.choice(spec.nuisance) for _ in range(length)]
        slots = rng.sample(range(length), spec.inject_count)
        for slot in slots:
            tokens[slot] = rng.choice(spec.keywords[label])
        out.append(LabeledExample(text=" ".join(tokens), label=label))
    return out


def keyword_lookup_label(text: str, spec: SynthSpec) -> int | None:
    """Oracle classifier for synthetic corpora: label of the keyword set present."""
    present = set(tokenize(text))
    for cls, kws in enumerate(spec.keywords):
        if present & set(kws):
            return cls
    return None


def save_synth_spec(path: str, spec: SynthSpec) -> None:
    doc = {
        "n_classes": spec.n_classes,
        "keywords": spec.keywords,
        "nuisance": spec.nuisance,
        "length_range": list(spec.length_range),
        "inject_count": spec.inject_count,
        "seed": spec.seed,
        "name": spec.name,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_synth_spec(path: str) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return SynthSpec(
        n_classes=doc["n_classes"],
        keywords=[list(k) for k in doc["keywords"]],
        nuisance=list(doc["nuisance"]),
        length_range=tuple(doc["length_range"]),
        inject_count=doc["inject_count"],
        seed=doc["seed"],
        name=doc.get("name", "synthetic"),
    )
