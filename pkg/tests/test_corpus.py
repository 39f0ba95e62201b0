import filecmp
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_majority_fixture
from lexacoustic.corpus import (Corpus, CorpusError, Dialog, Utterance, context_windows, format_stats, load_corpus,
                                save_corpus, stats, window_indices)
from lexacoustic.dsp import extract_mfcc, read_wav, slice_utterance
from lexacoustic.presets import PRESETS, preset
from lexacoustic.synth import SynthSpec, class_counts, generate, synth_generate

FIXTURES = Path(__file__).parent / "fixtures"


def _write(root, labels="A\nB\n", **splits):
    root.mkdir(parents=True, exist_ok=True)
    (root / "labels.txt").write_text(labels)
    for name, text in splits.items():
        (root / f"{name}.tsv").write_text(text)
    return root


# ---------------------------------------------------------------- loading

def test_two_dialog_fixture():
    c = load_corpus(FIXTURES / "two_dialogs")
    d1, d2 = c.split("train")
    assert (d1.dialog_id, len(d1)) == ("d1", 3)
    assert (d2.dialog_id, len(d2)) == ("d2", 2)
    assert d1.utterances[2].tokens == ("is", "it", "done", "?")
    assert d1.utterances[0].start_sec == 0.1 and d2.utterances[0].start_sec is None
    assert c.split("valid") == [] and c.split("test") == []


def test_unknown_label_named(tmp_path):
    _write(tmp_path, train="d\t0\tA\tZEBRA\t\t\t\thi\n")
    with pytest.raises(CorpusError, match="ZEBRA"):
        load_corpus(tmp_path)


@pytest.mark.parametrize("times", ["1.0\t0.5", "1.0\t1.0", "-1\t2", "1.0\t", "x\ty"])
def test_bad_times_rejected(tmp_path, times):
    _write(tmp_path, train=f"d\t0\tA\tA\t{times}\t\thi\n")
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_structural_errors(tmp_path):
    with pytest.raises(CorpusError, match="labels.txt"):
        load_corpus(tmp_path)
    _write(tmp_path / "short", train="d\t0\tA\n")
    with pytest.raises(CorpusError, match="7"):
        load_corpus(tmp_path / "short")
    _write(tmp_path / "dup", train="d\t0\tA\tA\t\t\t\thi\nd\t0\tA\tB\t\t\t\tho\n")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(tmp_path / "dup")
    _write(tmp_path / "cross", train="d\t0\tA\tA\t\t\t\thi\n", test="d\t1\tA\tA\t\t\t\tho\n")
    with pytest.raises(CorpusError, match="both"):
        load_corpus(tmp_path / "cross")


def test_manifest_layout(tmp_path):
    _write(tmp_path, corpus="a\t1\tX\tA\t\t\t\tsecond\na\t0\tX\tB\t\t\t\tfirst\nb\t0\tY\tA\t\t\t\tother\n",
           splits="a\ttrain\nb\ttest\n")
    c = load_corpus(tmp_path)
    assert [u.tokens for u in c.utterances("train")] == [("first",), ("second",)]
    assert len(c.utterances("test")) == 1


def test_round_trip(tmp_path):
    c = load_corpus(FIXTURES / "two_dialogs")
    save_corpus(c, tmp_path)
    back = load_corpus(tmp_path)
    assert back.labels == c.labels
    for s in ("train", "valid", "test"):
        assert back.split(s) == c.split(s)


def test_missing_audio_detected(tmp_path):
    _write(tmp_path, train="d\t0\tA\tA\t0.0\t1.0\taudio/none.wav\thi\n")
    load_corpus(tmp_path)
    with pytest.raises(CorpusError, match="not found"):
        load_corpus(tmp_path, require_audio=True)


# ---------------------------------------------------------------- stats

def test_stats_majority_two_thirds(tmp_path):
    _write(tmp_path, train="d\t0\tA\tA\t\t\t\tx\nd\t1\tA\tA\t\t\t\ty\nd\t2\tA\tB\t\t\t\tz\n")
    s = stats(load_corpus(tmp_path))
    assert s["train"].majority_label == "A"
    assert round(s["train"].majority_pct, 1) == 66.7
    assert s["valid"].n_utterances == 0 and s["valid"].majority_pct is None
    assert s["train"].vocab_size == 3
    assert "66.7%" in format_stats(load_corpus(tmp_path))


def test_stats_engineered_591(tmp_path):
    write_majority_fixture(tmp_path)
    s = stats(load_corpus(tmp_path))["test"]
    assert s.n_utterances == 1000 and s.n_dialogs == 100
    assert f"{s.majority_pct:.1f}" == "59.1"
    assert s.histogram == {"S": 591, "B": 204, "Q": 205}


# ---------------------------------------------------------------- context windows

def _dialog(did, n):
    return Dialog(did, tuple(Utterance(did, k, "A", ("w",), "A") for k in range(n)))


def test_windows_examples():
    assert [len(w) for w in context_windows([_dialog("a", 1)], 3)] == [1]
    assert [len(w) for w in context_windows([_dialog("a", 5)], 2)] == [1, 2, 3, 3, 3]
    for w in context_windows([_dialog("a", 4), _dialog("b", 3)], 3):
        assert len({u.dialog_id for u in w}) == 1
    with pytest.raises(ValueError):
        list(context_windows([_dialog("a", 2)], -1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=1, max_size=6), st.integers(0, 4))
def test_windows_partition_utterances(lengths, n):
    wins = window_indices(lengths, n)
    assert len(wins) == sum(lengths)
    assert [w[-1] for w in wins] == list(range(sum(lengths)))
    starts = np.cumsum([0] + lengths[:-1])
    for w in wins:
        d = np.searchsorted(starts, w[-1], side="right") - 1
        assert all(starts[d] <= i for i in w)
        assert len(w) <= n + 1


# ---------------------------------------------------------------- synthetic corpora

def _small_spec(**kw):
    base = {
        "sizes": {"train": 40, "valid": 10, "test": 10},
        "classes": [
            {"name": "STATEMENT", "templates": ["this is your car"], "prosody": {"contour": "flat"}},
            {"name": "QUESTION", "templates": ["this is your car"], "prosody": {"contour": "rise", "range": 0.6}},
        ],
    }
    base.update(kw)
    return SynthSpec.from_dict(base)


def test_synth_same_tokens_different_audio(tmp_path):
    c = synth_generate(_small_spec(), 1, tmp_path)
    by_label = {}
    for u in c.utterances("train"):
        by_label.setdefault(u.label, []).append(u)
    st_, q = by_label["STATEMENT"][0], by_label["QUESTION"][0]
    assert st_.tokens == q.tokens == ("this", "is", "your", "car")

    def grid(u):
        return slice_utterance(extract_mfcc(read_wav(c.audio_file(u))), u.start_sec, u.end_sec).coeffs

    def mean_vec(label):
        return np.mean([grid(u).mean(axis=1) for u in by_label[label][:8]], axis=0)
    a, b = grid(st_), grid(q)
    n = min(a.shape[1], b.shape[1])
    assert np.max(np.abs(a[:, :n] - b[:, :n])) > 0.1
    assert np.max(np.abs(mean_vec("STATEMENT") - mean_vec("QUESTION"))) > 0.1


def test_synth_deterministic(tmp_path):
    synth_generate(_small_spec(), 5, tmp_path / "a")
    synth_generate(_small_spec(), 5, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list
    for f in (tmp_path / "a").rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert not np.array_equal(generate(_small_spec(), 6)[1]["audio/train0000.wav"],
                              generate(_small_spec(), 5)[1]["audio/train0000.wav"])


def test_synth_exact_sizes():
    spec = _small_spec(sizes={"train": 400, "valid": 50, "test": 50})
    c, audio = generate(spec, 0)
    assert [len(c.utterances(s)) for s in ("train", "valid", "test")] == [400, 50, 50]
    assert len(audio) == 80 + 10 + 10


def test_synth_times_are_ordered_and_inside_audio():
    c, audio = generate(_small_spec(), 2)
    for d in c.split("train"):
        n = len(audio[d.utterances[0].audio_path]) / 16000
        prev = 0.0
        for u in d.utterances:
            assert prev <= u.start_sec < u.end_sec <= n
            prev = u.end_sec


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_majority_predictor_scores_designed_prior(name):
    spec = preset(name)
    c, _ = generate(spec, 3)
    weights = np.array([cl.weight for cl in spec.classes])
    for split in ("train", "valid", "test"):
        utts = c.utterances(split)
        counts = class_counts(weights, len(utts))
        major = spec.classes[int(np.argmax(counts))].name
        acc = np.mean([u.label == major for u in utts])
        assert acc == max(counts) / len(utts)
        if len(utts) * weights.max() % weights.sum() == 0:
            assert acc == weights.max() / weights.sum()


def test_class_counts_largest_remainder():
    assert class_counts([1, 1, 1], 10) == [4, 3, 3]
    assert class_counts([2, 2, 1], 500) == [200, 200, 100]
    assert sum(class_counts([0.3, 0.7, 1.1], 37)) == 37


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"classes": []})
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"classes": [{"name": "A", "templates": ["x"], "prosody": {"contour": "wobble"}}]})
    with pytest.raises(KeyError):
        preset("nope")


def test_question_mark_stripping_keeps_structure():
    c = load_corpus(FIXTURES / "two_dialogs")
    s = c.without_question_marks()
    assert all("?" not in u.tokens for u in s.utterances("train"))
    assert [u.label for u in s.utterances("train")] == [u.label for u in c.utterances("train")]
    assert isinstance(s, Corpus)
