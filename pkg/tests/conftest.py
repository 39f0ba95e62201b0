from __future__ import annotations

import numpy as np
import pytest

from lexacoustic.model import Batch, ModelDims, init_params
from lexacoustic.training import TrainConfig

TINY = dict(emb_dim=6, filter_widths=(2, 3), feature_maps=3, hidden=4, am_feature_maps=2,
            am_filter_width=3, am_max_frames=12, am_pool=4)


def tiny_dims(num_classes: int = 3) -> ModelDims:
    return ModelDims(num_classes=num_classes, **TINY)


def tiny_config(**kw) -> TrainConfig:
    base = dict(TINY, epochs=2, batch_size=5, dtype="float64")
    base.update(kw)
    return TrainConfig(**base)


def toy_batch(rng: np.random.Generator, dims: ModelDims, vocab_size: int = 9) -> Batch:
    """Two dialogs of three utterances each, every utterance a target."""
    n_utt = 6
    lengths = rng.integers(1, 6, size=n_utt)
    ids = np.zeros((n_utt, lengths.max()), dtype=np.int64)
    for k, n in enumerate(lengths):
        ids[k, :n] = rng.integers(1, vocab_size, size=n)
    windows = np.array([[0, 0, 0], [0, 1, 0], [0, 1, 2], [3, 0, 0], [3, 4, 0], [3, 4, 5]])
    wlen = np.array([1, 2, 3, 1, 2, 3])
    frames = rng.integers(3, dims.am_max_frames + 4, size=n_utt)
    mfcc = np.zeros((n_utt, dims.n_mfcc, dims.am_max_frames))
    for k, f in enumerate(frames):
        mfcc[k, :, :min(f, dims.am_max_frames)] = rng.normal(size=(dims.n_mfcc, min(f, dims.am_max_frames)))
    return Batch(labels=rng.integers(0, dims.num_classes, size=n_utt), token_ids=ids, lengths=lengths,
                 windows=windows, window_lengths=wlen, mfcc=mfcc,
                 mfcc_frames=np.minimum(frames, dims.am_max_frames))


def toy_params(kind: str, dims: ModelDims, seed: int = 0, vocab_size: int = 9) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p = init_params(kind, dims, vocab_size, rng, dtype=np.float64)
    # nonzero biases and norm stats so every group matters
    for k in p:
        if ".b" in k or k.endswith("bias") or k == "head.b":
            p[k] = rng.normal(scale=0.1, size=p[k].shape)
    if "ac.norm.mean" in p:
        p["ac.norm.mean"] = rng.normal(scale=0.1, size=p["ac.norm.mean"].shape)
        p["ac.norm.std"] = rng.uniform(0.5, 2.0, size=p["ac.norm.std"].shape)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_majority_fixture(root, n_total: int = 1000, n_major: int = 591):
    """Corpus whose test split has ``n_major`` of ``n_total`` utterances labelled S."""
    from lexacoustic.corpus import Corpus, Dialog, Utterance, save_corpus
    labels = ("S", "B", "Q")
    rest = n_total - n_major
    seq = ["S"] * n_major + ["B"] * (rest // 2) + ["Q"] * (rest - rest // 2)
    rng = np.random.default_rng(591)
    rng.shuffle(seq)
    dialogs = []
    for d in range(0, n_total, 10):
        did = f"m{d // 10:03d}"
        utts = tuple(Utterance(did, k, "AB"[k % 2], ("w", lab.lower()), lab)
                     for k, lab in enumerate(seq[d:d + 10]))
        dialogs.append(Dialog(did, utts))
    train = [Dialog("t0", (Utterance("t0", 0, "A", ("w",), "S"),))]
    corpus = Corpus(labels, {"train": train, "valid": [], "test": dialogs}, root)
    save_corpus(corpus, root)
    return corpus


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
