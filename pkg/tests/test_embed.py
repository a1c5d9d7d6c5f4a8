import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synattack.corpus import LabeledExample, Vocab, build_vocab, encode_tokens
from synattack.embed import (
    EmbeddingError,
    EmbeddingTable,
    SynonymIndex,
    UnmeasurableSimilarity,
    build_synonym_index,
    cosine,
    load_embeddings,
    mean_vector,
    nearest_synonyms,
    save_embeddings,
    sentence_similarity,
)


def write_embeddings(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in rows:
            fh.write(word + " " + " ".join(str(v) for v in vec) + "\n")
    return str(path)


class TestLoadEmbeddings:
    def test_three_lines(self, tmp_path):
        path = write_embeddings(
            tmp_path / "e.txt",
            [("a", [1, 0, 0, 0, 0]), ("b", [0, 1, 0, 0, 0]), ("c", [0, 0, 1, 0, 0])],
        )
        table = load_embeddings(path)
        assert len(table) == 3 and table.dim == 5

    def test_inconsistent_dim_cites_line(self, tmp_path):
        path = write_embeddings(
            tmp_path / "e.txt", [("a", [1, 0, 0, 0, 0]), ("b", [1, 0, 0, 0])]
        )
        with pytest.raises(EmbeddingError, match=":2:"):
            load_embeddings(path)

    def test_zero_vector_names_word(self, tmp_path):
        path = write_embeddings(tmp_path / "e.txt", [("dead", [0, 0, 0])])
        with pytest.raises(EmbeddingError, match="dead"):
            load_embeddings(path)

    def test_restrict_to_vocab_is_intersection(self, tmp_path):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(400)]
        path = write_embeddings(
            tmp_path / "e.txt", [(w, rng.normal(size=4).round(4)) for w in words]
        )
        vocab = build_vocab([LabeledExample(" ".join(words[::3]) + " extra", 0)])
        table = load_embeddings(path, restrict_to=vocab)
        # independent oracle: set intersection
        expected = set(words) & set(vocab.itos)
        assert set(table.vectors) == expected

    def test_round_trip_via_save(self, tmp_path):
        vecs = {"a": np.array([0.5, -1.25]), "b": np.array([3.0, 4.0])}
        path = tmp_path / "e.txt"
        save_embeddings(str(path), vecs)
        table = load_embeddings(str(path))
        assert np.allclose(table.vectors["b"], [3.0, 4.0])


class TestCosine:
    def test_identity(self):
        v = np.array([0.3, -2.0, 1.1])
        assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        assert cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(
            0.70711, abs=1e-5
        )

    def test_zero_norm_rejected(self):
        with pytest.raises(EmbeddingError):
            cosine(np.zeros(3), np.ones(3))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=5), rng.normal(size=5)
        c = cosine(a, b)
        assert c == cosine(b, a)
        assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12


class TestNearestSynonyms:
    def test_no_neighbor_above_threshold(self):
        table = EmbeddingTable({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})
        assert nearest_synonyms("a", table, 5, 0.5) == []

    def test_universe_bound(self):
        table = EmbeddingTable(
            {
                "a": np.array([1.0, 0.1]),
                "b": np.array([1.0, 0.2]),
                "c": np.array([1.0, 0.3]),
            }
        )
        assert len(nearest_synonyms("a", table, 5, -1.0)) == 2

    def test_absent_word_gives_empty_list(self):
        table = EmbeddingTable({"a": np.array([1.0, 0.0])})
        assert nearest_synonyms("zzz", table, 5, 0.5) == []

    def test_never_own_neighbor(self):
        table = EmbeddingTable({"a": np.array([1.0, 0.0]), "b": np.array([1.0, 0.0])})
        names = [w for w, _ in nearest_synonyms("a", table, 5, 0.0)]
        assert "a" not in names and "b" in names

    def test_matches_brute_force_scan_for_every_word(self):
        rng = np.random.default_rng(7)
        words = [f"w{i:04d}" for i in range(1000)]
        table = EmbeddingTable({w: rng.normal(size=8) for w in words})
        # independent oracle: full cosine matrix built directly from raw vectors
        mat = np.stack([table.vectors[w] for w in words])
        mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        sim_matrix = mat @ mat.T
        for qi, word in enumerate(words):
            got = nearest_synonyms(word, table, 5, 0.3)
            pairs = [
                (words[i], sim_matrix[qi, i])
                for i in range(len(words))
                if i != qi and sim_matrix[qi, i] >= 0.3
            ]
            pairs.sort(key=lambda t: (-t[1], t[0]))
            assert [w for w, _ in got] == [w for w, _ in pairs[:5]]

    def test_similarity_values_match_cosine_op(self):
        rng = np.random.default_rng(3)
        words = [f"w{i}" for i in range(50)]
        table = EmbeddingTable({w: rng.normal(size=8) for w in words})
        for word in words[::7]:
            for name, sim in nearest_synonyms(word, table, 5, 0.3):
                assert sim == pytest.approx(
                    cosine(table.vectors[word], table.vectors[name]), abs=1e-12
                )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_similarities_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        table = EmbeddingTable({f"w{i}": rng.normal(size=4) for i in range(30)})
        sims = [s for _, s in nearest_synonyms("w0", table, 10, -1.0)]
        assert all(a >= b for a, b in zip(sims, sims[1:]))


class TestSynonymIndex:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        words = [f"w{i}" for i in range(20)]
        table = EmbeddingTable({w: rng.normal(size=6) for w in words}, source_hash="h1")
        vocab = Vocab(["<pad>", "<unk>"] + words)
        index = build_synonym_index(table, vocab, n_syn=4, syn_threshold=0.2)
        path = tmp_path / "syn.json"
        index.save(str(path))
        loaded = SynonymIndex.load(str(path))
        assert loaded.embedding_hash == "h1"
        assert loaded.vocab_hash == vocab.content_hash()
        assert loaded.n_syn == 4 and loaded.syn_threshold == 0.2
        for w in words:
            assert [n for n, _ in loaded.lookup(w)] == [n for n, _ in index.lookup(w)]

    def test_lookup_needs_no_table_scan(self):
        index = SynonymIndex({"good": [("fine", 0.9)]}, "e", "v", 5, 0.5)
        assert index.lookup("good") == [("fine", 0.9)]
        assert index.lookup("missing") == []


def one_hot_table(n, dim):
    vecs = {}
    for i in range(n):
        v = np.zeros(dim)
        v[i] = 1.0
        vecs[f"w{i}"] = v
    return EmbeddingTable(vecs)


class TestSentenceSimilarity:
    def make(self, tokens, vocab, d=8):
        return encode_tokens(tokens, vocab, d)

    def test_identical_sentences(self):
        table = one_hot_table(4, 4)
        vocab = Vocab(["<pad>", "<unk>", "w0", "w1"])
        x = self.make(["w0", "w1"], vocab)
        assert sentence_similarity(x, x, table, vocab) == 1.0

    def test_orthogonal_single_tokens(self):
        table = one_hot_table(4, 4)
        vocab = Vocab(["<pad>", "<unk>", "w0", "w1"])
        a = self.make(["w0"], vocab)
        b = self.make(["w1"], vocab)
        assert sentence_similarity(a, b, table, vocab) == pytest.approx(0.5)

    def test_one_word_swap_matches_recomputation(self):
        rng = np.random.default_rng(5)
        words = [f"w{i}" for i in range(21)]
        vecs = {w: rng.normal(size=12) for w in words[:-1]}
        base = vecs["w3"] / np.linalg.norm(vecs["w3"])
        noise = rng.normal(size=12)
        noise -= noise @ base * base
        noise /= np.linalg.norm(noise)
        vecs["w20"] = 0.9 * base + np.sqrt(1 - 0.81) * noise  # cosine 0.9 to w3
        table = EmbeddingTable(vecs)
        vocab = Vocab(["<pad>", "<unk>"] + words)
        sentence = words[:20]
        swapped = sentence.copy()
        swapped[3] = "w20"
        a = encode_tokens(sentence, vocab, 24)
        b = encode_tokens(swapped, vocab, 24)
        got = sentence_similarity(a, b, table, vocab)
        # independent recomputation from raw vectors
        ma = np.mean([vecs[w] for w in sentence], axis=0)
        mb = np.mean([vecs[w] for w in swapped], axis=0)
        expected = (ma @ mb / (np.linalg.norm(ma) * np.linalg.norm(mb)) + 1) / 2
        assert got == pytest.approx(expected, abs=0.02)

    def test_unmeasurable_without_table_tokens(self):
        table = one_hot_table(2, 2)
        vocab = Vocab(["<pad>", "<unk>", "w0", "zzz"])
        a = self.make(["w0"], vocab)
        b = self.make(["zzz"], vocab)
        with pytest.raises(UnmeasurableSimilarity):
            sentence_similarity(a, b, table, vocab)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_exact(self, seed):
        rng = np.random.default_rng(seed)
        words = [f"w{i}" for i in range(12)]
        table = EmbeddingTable({w: rng.normal(size=5) for w in words})
        vocab = Vocab(["<pad>", "<unk>"] + words)
        pick = lambda: [words[i] for i in rng.integers(0, len(words), size=rng.integers(1, 6))]
        a = encode_tokens(pick(), vocab, 8)
        b = encode_tokens(pick(), vocab, 8)
        assert sentence_similarity(a, b, table, vocab) == sentence_similarity(
            b, a, table, vocab
        )

    def test_mean_vector_skips_out_of_table_tokens(self):
        table = one_hot_table(2, 2)
        assert np.allclose(mean_vector(["w0", "zzz"], table), [1.0, 0.0])
