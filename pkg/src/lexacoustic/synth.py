"""Seeded synthetic dialog corpora with paired audio.

Each class has lexical templates and a prosody profile. Audio is a
harmonic tone whose fundamental follows the class pitch contour, plus
Gaussian noise, so classes can be made lexically separable, acoustically
separable, or both. One WAV per dialog; utterance times locate each turn.

Spec file (JSON)::

    {"sample_rate": 16000, "dialog_length": 5, "gap_sec": 0.1, "noise": 0.003,
     "confusability": 0.0,
     "sizes": {"train": 400, "valid": 50, "test": 50},
     "classes": [
        {"name": "STATEMENT", "weight": 1, "templates": ["this is your car"],
         "prosody": {"contour": "flat", "f0": 120, "range": 0.5,
                     "word_sec": 0.25, "amplitude": 0.5}}]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import SPLITS, Corpus, Dialog, Utterance, save_corpus
from .dsp import WavSignal, write_wav
from .text import tokenize

CONTOURS = ("flat", "rise", "fall")


@dataclass(frozen=True)
class Prosody:
    contour: str = "flat"
    f0: float = 120.0
    range: float = 0.5
    word_sec: float = 0.25
    amplitude: float = 0.5
    f0_jitter: float = 0.1

    def __post_init__(self):
        if self.contour not in CONTOURS:
            raise ValueError(f"unknown pitch contour {self.contour!r}; expected one of {CONTOURS}")


@dataclass(frozen=True)
class SynthClass:
    name: str
    templates: tuple[str, ...]
    prosody: Prosody = Prosody()
    weight: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[SynthClass, ...]
    sizes: dict = field(default_factory=lambda: {"train": 400, "valid": 50, "test": 50})
    sample_rate: int = 16000
    dialog_length: int = 5
    gap_sec: float = 0.1
    noise: float = 0.003
    confusability: float = 0.0
    harmonics: int = 6

    def __post_init__(self):
        if not self.classes:
            raise ValueError("synthetic spec needs at least one class")
        if any(not c.templates for c in self.classes):
            raise ValueError("every class needs at least one template")
        if not 0 <= self.confusability <= 1:
            raise ValueError("confusability must be in [0, 1]")
        if self.dialog_length < 1:
            raise ValueError("dialog_length must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["classes"] = tuple(
            SynthClass(c["name"], tuple(c["templates"]), Prosody(**c.get("prosody", {})), c.get("weight", 1.0))
            for c in d.get("classes", ())
        )
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def class_counts(weights, total: int) -> list[int]:
    """Largest-remainder allocation of ``total`` items proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(int)
    remainder = total - counts.sum()
    for k in np.argsort(-(quota - counts), kind="stable")[:remainder]:
        counts[k] += 1
    return counts.tolist()


def pitch_track(prosody: Prosody, base: float, n: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n)
    if prosody.contour == "rise":
        return base * (1 + prosody.range * u ** 2)
    if prosody.contour == "fall":
        return base * (1 + prosody.range * (1 - u) ** 2)
    return np.full(n, base)


def render_tone(prosody: Prosody, duration: float, rng: np.random.Generator,
                sample_rate: int = 16000, harmonics: int = 6) -> np.ndarray:
    n = max(1, int(round(duration * sample_rate)))
    base = prosody.f0 * (1 + prosody.f0_jitter * rng.uniform(-1, 1))
    f0 = pitch_track(prosody, base, n)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    wave = sum(np.sin(k * phase) / k for k in range(1, harmonics + 1) if k * f0.max() < sample_rate / 2)
    ramp = min(n // 2, int(0.01 * sample_rate))
    env = np.ones(n)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        env[:ramp], env[-ramp:] = fade, fade[::-1]
    return prosody.amplitude * wave * env / 2.0


def generate(spec: SynthSpec, seed: int) -> tuple[Corpus, dict[str, np.ndarray]]:
    """Build the corpus in memory; returns it with ``{audio_path: samples}``."""
    root = np.random.SeedSequence(seed)
    streams = dict(zip(SPLITS, (np.random.default_rng(s) for s in root.spawn(len(SPLITS)))))
    all_templates = [(k, t) for k, c in enumerate(spec.classes) for t in c.templates]
    labels = tuple(c.name for c in spec.classes)
    splits, audio = {}, {}
    for split in SPLITS:
        rng = streams[split]
        total = int(spec.sizes.get(split, 0))
        counts = class_counts([c.weight for c in spec.classes], total)
        label_seq = np.repeat(np.arange(len(spec.classes)), counts)
        rng.shuffle(label_seq)
        dialogs = []
        for d, start in enumerate(range(0, total, spec.dialog_length)):
            did = f"{split}{d:04d}"
            apath = f"audio/{did}.wav"
            pieces, utts, t = [], [], 0.0
            gap = int(round(spec.gap_sec * spec.sample_rate))
            for k, ci in enumerate(label_seq[start:start + spec.dialog_length]):
                cls = spec.classes[ci]
                if spec.confusability and rng.random() < spec.confusability:
                    template = all_templates[rng.integers(len(all_templates))][1]
                else:
                    template = cls.templates[rng.integers(len(cls.templates))]
                tokens = tokenize(template)
                words = max(1, sum(tok.isalnum() for tok in tokens))
                duration = max(0.2, words * cls.prosody.word_sec * rng.uniform(0.85, 1.15))
                tone = render_tone(cls.prosody, duration, rng, spec.sample_rate, spec.harmonics)
                pieces.append(np.zeros(gap))
                t0 = (sum(len(p) for p in pieces)) / spec.sample_rate
                pieces.append(tone)
                t1 = t0 + len(tone) / spec.sample_rate
                utts.append(Utterance(did, k, "AB"[k % 2], tuple(tokens), cls.name,
                                      round(t0, 6), round(t1, 6), apath))
            pieces.append(np.zeros(gap))
            signal = np.concatenate(pieces)
            signal = signal + spec.noise * rng.standard_normal(len(signal))
            audio[apath] = np.clip(signal, -1.0, 1.0)
            dialogs.append(Dialog(did, tuple(utts)))
        splits[split] = dialogs
    return Corpus(labels, splits), audio


def synth_generate(spec: SynthSpec, seed: int, out_dir) -> Corpus:
    """Write the corpus files and one WAV per dialog under ``out_dir``."""
    out = Path(out_dir)
    corpus, audio = generate(spec, seed)
    for rel, samples in audio.items():
        write_wav(out / rel, WavSignal(spec.sample_rate, samples))
    save_corpus(corpus, out)
    corpus.root = out
    return corpus
