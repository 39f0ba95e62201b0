import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexacoustic.text import (PAD, PAD_ID, UNK_ID, EmbeddingTable, Vocabulary, build_vocab, embed_utterance,
                              load_embeddings, pad_ids, strip_question_marks, tokenize)


@pytest.mark.parametrize("text,tokens", [
    ("this is your car?", ["this", "is", "your", "car", "?"]),
    ("Yeah", ["yeah"]),
    ("", []),
    ("Well, okay!  right?!", ["well", ",", "okay", "!", "right", "?", "!"]),
    ("?? what", ["?", "?", "what"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcXY?.,! \t", max_size=40))
def test_tokenize_idempotent(text):
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


def test_build_vocab_frequency_order():
    v = build_vocab([["a", "a", "b"]])
    assert v.id("a") < v.id("b")
    assert v.id("zzz") == UNK_ID
    assert v.itos[PAD_ID] == PAD


def test_build_vocab_ties_and_min_count():
    v = build_vocab([["c", "b", "a", "a"], ["b"]], min_count=2)
    assert v.itos[2:] == ["a", "b"]


def test_vocab_files_identical(tmp_path):
    toks = [tokenize("the cat sat on the mat ?"), tokenize("the dog ?")]
    build_vocab(toks).save(tmp_path / "a.txt")
    build_vocab(toks).save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert Vocabulary.load(tmp_path / "a.txt") == build_vocab(toks)


def _embedding_file(path, rows, dim):
    lines = [f"{len(rows)} {dim}"] + [tok + " " + " ".join(map(repr, vec)) for tok, vec in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_embeddings_uses_file_rows(tmp_path):
    vocab = Vocabulary(["car", "bus"])
    v = [0.125, -1.5, 3.0]
    _embedding_file(tmp_path / "e.txt", [("car", v), ("tree", [9.0, 9.0, 9.0])], 3)
    t1 = load_embeddings(tmp_path / "e.txt", vocab, dim=3, seed=4)
    t2 = load_embeddings(tmp_path / "e.txt", vocab, dim=3, seed=4)
    np.testing.assert_array_equal(t1.vectors[vocab.id("car")], v)
    np.testing.assert_array_equal(t1.vectors[vocab.id("bus")], t2.vectors[vocab.id("bus")])
    assert np.all(np.abs(t1.vectors[vocab.id("bus")]) <= 0.25)
    assert not t1.vectors[PAD_ID].any()


def test_load_embeddings_fallback_and_errors(tmp_path):
    vocab = Vocabulary(["a"])
    t = load_embeddings(None, vocab, dim=5, seed=0)
    assert t.vectors.shape == (3, 5) and not t.vectors[PAD_ID].any()
    _embedding_file(tmp_path / "e.txt", [("a", [1.0, 2.0])], 2)
    with pytest.raises(ValueError, match="dim"):
        load_embeddings(tmp_path / "e.txt", vocab, dim=5)


def test_embedding_table_round_trip(tmp_path):
    vocab = Vocabulary(["x", "y"])
    table = load_embeddings(None, vocab, dim=4, seed=9)
    table.save(tmp_path / "t.txt", vocab)
    back = load_embeddings(tmp_path / "t.txt", vocab, dim=4, seed=123)
    np.testing.assert_array_equal(back.vectors, table.vectors)


def test_strip_question_marks():
    assert strip_question_marks(["is", "it", "?"]) == ["is", "it"]
    assert strip_question_marks(["fine"]) == ["fine"]
    assert strip_question_marks(["?"]) == []
    assert pad_ids([]) == [PAD_ID]


def test_embed_utterance():
    table = EmbeddingTable(np.random.default_rng(0).normal(size=(5, 300)))
    table.vectors[PAD_ID] = 0
    g = embed_utterance([3], table)
    assert g.shape == (300, 1)
    np.testing.assert_array_equal(g[:, 0], table.vectors[3])
    empty = embed_utterance([], table)
    assert empty.shape == (300, 1) and not empty.any()
    ids = list(np.random.default_rng(1).integers(1, 5, size=200))
    long = embed_utterance(ids, table, max_len=100)
    assert long.shape == (300, 100)
    np.testing.assert_array_equal(long, table.vectors[ids[:100]].T)
