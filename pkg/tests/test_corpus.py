import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synattack import corpus
from synattack.corpus import (
    CorpusError,
    LabeledExample,
    SynthSpec,
    build_vocab,
    decode,
    encode,
    encode_tokens,
    keyword_lookup_label,
    load_records,
    synth_generate,
    tokenize,
)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("Good movie!") == ["good", "movie", "!"]

    def test_empty(self):
        assert tokenize("") == []

    def test_clitic_stays_attached(self):
        # hand-derived: apostrophe-led suffixes form their own token
        assert tokenize("it's fine") == ["it", "'s", "fine"]

    def test_lowercasing_and_commas(self):
        assert tokenize("Great, GREAT stuff.") == ["great", ",", "great", "stuff", "."]


class TestLoadRecords:
    def test_two_valid_lines(self, tmp_path):
        path = write_jsonl(
            tmp_path / "c.jsonl",
            [{"text": "good", "label": 1}, {"text": "bad", "label": 0}],
        )
        records = load_records(path)
        assert [(r.text, r.label) for r in records] == [("good", 1), ("bad", 0)]

    def test_missing_label_cites_line(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [{"text": "good"}])
        with pytest.raises(CorpusError, match=":1:"):
            load_records(path)

    def test_malformed_line_cites_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"text": "ok", "label": 0}\nnot json\n')
        with pytest.raises(CorpusError, match=":2:"):
            load_records(str(path))

    def test_unknown_label_named(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [{"text": "x", "label": 7}])
        with pytest.raises(CorpusError, match="unknown label 7"):
            load_records(path, n_classes=2)

    def test_custom_field_names(self, tmp_path):
        path = write_jsonl(tmp_path / "c.jsonl", [{"review": "nice", "sentiment": 1}])
        records = load_records(path, text_field="review", label_field="sentiment")
        assert records[0].text == "nice"

    def test_large_file_shape(self, tmp_path):
        # 25k-line file in the shape of a full-size review corpus
        path = write_jsonl(
            tmp_path / "big.jsonl",
            [{"text": f"review number {i}", "label": i % 2} for i in range(25_000)],
        )
        assert len(load_records(path, n_classes=2)) == 25_000


class TestBuildVocab:
    def test_min_count_threshold(self):
        vocab = build_vocab([LabeledExample("a a b", 0)], min_count=2)
        assert "a" in vocab and "b" not in vocab

    def test_ties_break_alphabetically(self):
        vocab = build_vocab([LabeledExample("b a c a b c", 0)])
        assert vocab.itos == ["<pad>", "<unk>", "a", "b", "c"]

    def test_distinct_token_count(self):
        # independent oracle: count distinct tokens directly
        rows = [LabeledExample(f"w{i} w{i % 7} shared", i % 2) for i in range(9_000)]
        distinct = set()
        for r in rows:
            distinct.update(tokenize(r.text))
        vocab = build_vocab(rows, min_count=1)
        assert len(vocab) == len(distinct) + 2

    @given(st.lists(st.text(alphabet="abc ", min_size=1, max_size=12), min_size=1, max_size=20),
           st.randoms(use_true_random=False))
    @settings(max_examples=40, deadline=None)
    def test_order_insensitive(self, texts, rnd):
        texts = [t for t in texts if t.strip()]
        if not texts:
            return
        examples = [LabeledExample(t, 0) for t in texts]
        shuffled = examples[:]
        rnd.shuffle(shuffled)
        assert build_vocab(examples).itos == build_vocab(shuffled).itos

    def test_empty_corpus_rejected(self):
        with pytest.raises(CorpusError):
            build_vocab([])


class TestEncode:
    def test_padding(self):
        vocab = build_vocab([LabeledExample("good", 0)])
        enc = encode_tokens(["good"], vocab, d=4)
        assert list(enc.ids) == [vocab.stoi["good"], 0, 0, 0]
        assert enc.length == 1

    def test_oov_maps_to_unk(self):
        vocab = build_vocab([LabeledExample("good", 0)])
        enc = encode_tokens(["novel"], vocab, d=2)
        assert enc.ids[0] == corpus.UNK_ID

    def test_long_review_truncated(self):
        text = " ".join(f"w{i}" for i in range(215))
        assert len(tokenize(text)) == 215
        vocab = build_vocab([LabeledExample(text, 0)])
        enc = encode(LabeledExample(text, 0), vocab, d=128)
        assert enc.length == 128
        assert decode(enc, vocab) == tokenize(text)[:128]

    def test_bad_d(self):
        vocab = build_vocab([LabeledExample("a", 0)])
        with pytest.raises(CorpusError):
            encode_tokens(["a"], vocab, d=0)

    @given(st.text(alphabet="abcd !?.x", min_size=1, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, text):
        tokens = tokenize(text)
        if not tokens:
            return
        vocab = build_vocab([LabeledExample("a b c d", 0)])
        d = 8
        enc = encode_tokens(tokens, vocab, d)
        expected = [t if t in vocab else corpus.UNK_TOKEN for t in tokens[:d]]
        assert decode(enc, vocab) == expected
        assert all(int(i) == corpus.PAD_ID for i in enc.ids[enc.length :])


class TestSynthGenerate:
    def spec(self, **kw):
        base = dict(
            n_classes=2,
            keywords=[["vek"], ["zub"]],
            nuisance=[f"n{i}" for i in range(30)],
            length_range=(5, 9),
            inject_count=1,
            seed=11,
        )
        base.update(kw)
        return SynthSpec(**base)

    def test_keyword_determines_label(self):
        for ex in synth_generate(self.spec(), 10):
            assert ("zub" in tokenize(ex.text)) == (ex.label == 1)

    def test_same_seed_identical(self):
        a = synth_generate(self.spec(), 50)
        b = synth_generate(self.spec(), 50)
        assert [(x.text, x.label) for x in a] == [(y.text, y.label) for y in b]

    def test_label_balance(self):
        sentences = synth_generate(self.spec(length_range=(15, 25)), 1000)
        positives = sum(ex.label for ex in sentences)
        assert 450 <= positives <= 550

    def test_lookup_oracle_recovers_labels(self):
        spec = self.spec()
        for ex in synth_generate(spec, 200):
            assert keyword_lookup_label(ex.text, spec) == ex.label

    def test_overlapping_keywords_rejected(self):
        with pytest.raises(CorpusError, match="overlap"):
            self.spec(keywords=[["vek"], ["vek"]])

    def test_keyword_nuisance_overlap_rejected(self):
        with pytest.raises(CorpusError, match="nuisance"):
            self.spec(nuisance=["zub", "n1"])


def test_synth_spec_file_round_trip(tmp_path):
    spec = SynthSpec(
        n_classes=2,
        keywords=[["vek"], ["zub"]],
        nuisance=["n1", "n2"],
        length_range=(4, 6),
        inject_count=1,
        seed=5,
    )
    path = tmp_path / "spec.json"
    corpus.save_synth_spec(str(path), spec)
    assert corpus.load_synth_spec(str(path)) == spec
