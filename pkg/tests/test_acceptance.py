"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary under "acceptance criteria".
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, tiny_config, tiny_dims, toy_batch, toy_params, write_majority_fixture
from lexacoustic import tensor as T
from lexacoustic.corpus import load_corpus
from lexacoustic.dsp import WavSignal, dct_matrix, extract_mfcc, frame_count
from lexacoustic.evaluation import ablation_question_mark, report_from_predictions
from lexacoustic.model import FROZEN, as_tensors, attend, batch_loss, roa_context
from lexacoustic.presets import preset
from lexacoustic.synth import SynthSpec, synth_generate
from lexacoustic.tensor import Tensor
from lexacoustic.training import TrainConfig, accuracy, prepare, train

SEEDS = (0, 1, 2, 3)
DESK = dict(batch_size=10)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# ---------------------------------------------------------------- 1 numerical core

def _conv_loop(grid, filt):
    d, n = grid.shape
    w = filt.shape[1]
    off = (w - 1) // 2
    out = np.zeros(n)
    for y in range(n):
        for i in range(d):
            for j in range(w):
                if 0 <= y + j - off < n:
                    out[y] += grid[i, y + j - off] * filt[i, j]
    return out


def test_criterion_1_numerical_core():
    t0 = time.time()
    dims = tiny_dims()
    batch = toy_batch(np.random.default_rng(7), dims)
    params = toy_params("lam", dims, seed=3)
    frozen = {k: Tensor(v) for k, v in params.items() if k in FROZEN}
    free = {k: v for k, v in params.items() if k not in FROZEN}
    free["emb.rows"] = free.pop("emb.table")[1:]

    def loss(p):
        p = dict(p)
        rows = p.pop("emb.rows")
        p["emb.table"] = T.concat([Tensor(np.zeros((1, rows.shape[1]))), rows], axis=0)
        return batch_loss("lam", batch, {**frozen, **p}, dims)

    errs = T.gradient_errors(loss, free)
    rng = np.random.default_rng(0)
    conv_err = 0.0
    for _ in range(200):
        d, n, w = rng.integers(1, 9), rng.integers(1, 13), rng.integers(1, 6)
        grid, filt = rng.normal(size=(d, n)), rng.normal(size=(d, w))
        conv_err = max(conv_err, np.max(np.abs(T.conv_time(Tensor(grid), Tensor(filt)).data - _conv_loop(grid, filt))))
    took = time.time() - t0
    worst = max(errs.values())
    ok = worst < 1e-4 and conv_err <= 1e-12 and took < 60
    record(1, ok, f"grad error {worst:.2e} over {len(errs)} groups, conv error {conv_err:.1e}, {took:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2 attention algebra

def test_criterion_2_attention():
    rng = np.random.default_rng(5)
    dims = tiny_dims()
    raw = toy_params("lm", dims, seed=5)
    p = as_tensors(raw)
    sums = max(abs(roa_context(Tensor(rng.normal(size=(L, dims.lexical_dim))), p)[1].sum() - 1)
               for L in range(1, 5) for _ in range(25))
    p0 = as_tensors({**raw, "ctx.attn.W": np.zeros_like(raw["ctx.attn.W"])})
    uniform = max(np.max(np.abs(roa_context(Tensor(rng.normal(size=(L, dims.lexical_dim))), p0)[1] - 1 / L))
                  for L in range(1, 5) for _ in range(25))
    _, alpha = attend(Tensor(np.array([[[math.log(2)], [0.0]]])), Tensor(np.array([1.0])))
    hand = np.max(np.abs(alpha.data[0] - [2 / 3, 1 / 3]))
    ok = sums <= 1e-12 and uniform <= 1e-12 and hand <= 1e-12
    record(2, ok, f"sum error {sums:.1e}, W=0 error {uniform:.1e}, hand case error {hand:.1e}")
    assert ok


# ---------------------------------------------------------------- 3 MFCC pipeline

def _frames_oracle(n, sr):
    win, hop = int(round(0.025 * sr)), int(round(0.010 * sr))
    if n < win:
        return 1
    count = 0
    while count * hop + win <= n:
        count += 1
    return count


def _tone(freq, amp=0.5):
    t = np.arange(16000) / 16000
    return WavSignal(16000, amp * np.sin(2 * np.pi * freq * t))


def test_criterion_3_mfcc():
    rng = np.random.default_rng(3)
    rates = (8000, 11025, 16000, 22050, 44100, 48000)
    mismatches = sum(frame_count(int(n), int(sr)) != _frames_oracle(int(n), int(sr))
                     for n, sr in zip(rng.integers(0, 50000, 500), rng.choice(rates, 500)))
    D = dct_matrix(26)
    xs = rng.normal(size=(26, 50))
    roundtrip = np.max(np.abs(D.T @ (D @ xs) - xs))
    sep = np.max(np.abs(extract_mfcc(_tone(440)).coeffs - extract_mfcc(_tone(880)).coeffs))
    base = _tone(440, amp=0.3)
    base.samples[:] += 0.01 * rng.standard_normal(base.samples.size)
    scaled = WavSignal(16000, 3.0 * base.samples)
    amp = np.max(np.abs(extract_mfcc(base).coeffs[1:] - extract_mfcc(scaled).coeffs[1:]))
    ok = mismatches == 0 and roundtrip < 1e-10 and sep > 0.1 and amp <= 1e-6
    record(3, ok, f"frame_count mismatches {mismatches}/500, DCT round trip {roundtrip:.1e}, "
                  f"tone separation {sep:.2f}, amplitude drift {amp:.1e}")
    assert ok


# ---------------------------------------------------------------- 4 training schedule

def test_criterion_4_schedule(tmp_path):
    spec = SynthSpec.from_dict({"dialog_length": 5, "sizes": {"train": 100, "valid": 10, "test": 10}, "classes": [
        {"name": "A", "templates": ["alpha beta"], "prosody": {"contour": "flat"}},
        {"name": "B", "templates": ["gamma"], "prosody": {"contour": "rise"}}]})
    corpus = synth_generate(spec, 0, tmp_path)
    cfg = tiny_config(batch_size=1, epochs=41, seed=4)
    a, b = train("lm", corpus, cfg), train("lm", corpus, cfg)
    lrs = [a.lr_trace[n] for n in (0, 2000, 4000)]
    same = a.log_text() == b.log_text()
    ok = lrs == [0.11, 0.099, 0.0891] and same
    record(4, ok, f"lr at updates 0/2000/4000 = {lrs}, identical epoch logs: {same}")
    assert ok


# ---------------------------------------------------------------- 5 overfit sanity

@pytest.mark.slow
def test_criterion_5_overfit(tmp_path):
    t0 = time.time()
    corpus = synth_generate(preset("separable"), 0, tmp_path)
    cfg = TrainConfig(seed=0, **DESK)
    vocab, data = prepare("lm", corpus, cfg)
    r = train("lm", corpus, cfg, data=data, vocab=vocab)
    acc = accuracy("lm", r.params, r.dims, data["train"])
    took = time.time() - t0
    ok = acc == 1.0 and len(r.epochs) <= 25 and took < 300
    record(5, ok, f"LM training accuracy {acc:.3f} after {len(r.epochs)} epochs "
                  f"on {len(corpus.utterances('train'))} utterances, {took:.0f}s")
    assert ok


# ---------------------------------------------------------------- 6 fusion

@pytest.mark.slow
def test_criterion_6_fusion(tmp_path):
    t0 = time.time()
    passed, notes = 0, []
    for seed in SEEDS:
        corpus = synth_generate(preset("fusion"), seed, tmp_path / str(seed))
        cfg = TrainConfig(seed=seed, **DESK)
        acc = {}
        for kind in ("lm", "am", "lam"):
            vocab, data = prepare(kind, corpus, cfg)
            r = train(kind, corpus, cfg, data=data, vocab=vocab)
            acc[kind] = 100 * accuracy(kind, r.params, r.dims, data["test"])
        good = acc["lam"] >= acc["lm"] + 10 and acc["lam"] >= acc["am"] + 10
        passed += good
        notes.append(f"s{seed} LM {acc['lm']:.0f} AM {acc['am']:.0f} LAM {acc['lam']:.0f}")
    took = time.time() - t0
    ok = passed >= 3 and took < 600
    record(6, ok, f"{passed}/4 seeds pass ({'; '.join(notes)}), {took:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7 question-mark ablation

@pytest.mark.slow
def test_criterion_7_question_mark(tmp_path):
    passed, notes = 0, []
    for seed in SEEDS:
        corpus = synth_generate(preset("qmark"), seed, tmp_path / str(seed))
        rep = ablation_question_mark(corpus, TrainConfig(seed=seed, **DESK))
        drop = {m: 100 * (rep.accuracy(m, "with") - rep.accuracy(m, "removed")) for m in ("LM", "LAM")}
        good = drop["LM"] >= 20 and drop["LAM"] <= drop["LM"] - 10
        passed += good
        notes.append(f"s{seed} drop LM {drop['LM']:.1f} LAM {drop['LAM']:.1f}")
    ok = passed >= 3
    record(7, ok, f"{passed}/4 seeds pass ({'; '.join(notes)})")
    assert ok


# ---------------------------------------------------------------- 8 reporting fidelity

def test_criterion_8_reporting(tmp_path):
    write_majority_fixture(tmp_path)
    c = load_corpus(tmp_path)
    ix = c.label_index()
    gold = [ix[u.label] for u in c.utterances("test")]
    rep = report_from_predictions(c.labels, gold, [ix["S"]] * len(gold), "majority")
    rng = np.random.default_rng(8)
    identities = True
    for _ in range(200):
        k, n = int(rng.integers(1, 6)), int(rng.integers(1, 80))
        g, p = rng.integers(0, k, n), rng.integers(0, k, n)
        r = report_from_predictions([f"c{i}" for i in range(k)], g, p)
        cm = r.confusion
        identities &= r.accuracy == np.trace(cm) / cm.sum() and cm.sum() == n
        identities &= bool(np.array_equal(cm.sum(axis=1), np.bincount(g, minlength=k)))
    cm = rep.confusion
    identities &= rep.accuracy == np.trace(cm) / cm.sum()
    ok = rep.accuracy == 0.591 and identities
    record(8, ok, f"majority accuracy {rep.accuracy}, confusion identities hold: {identities}")
    assert ok
