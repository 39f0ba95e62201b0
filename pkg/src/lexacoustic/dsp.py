"""WAV I/O and frame-level MFCC extraction.

Defaults: 25 ms Hamming frames every 10 ms, per-frame pre-emphasis 0.97,
FFT size the next power of two >= the frame, 26 triangular mel filters
from 0 Hz to Nyquist, log floored at 1e-10, orthonormal DCT-II keeping
c0..c12. No liftering, no deltas, no mean normalization unless asked.
"""
from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .io_utils import atomic_write_bytes

MFCC_MAGIC = b"MFCC"
MFCC_VERSION = 1


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class WavSignal:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("signal contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 25.0
    shift_ms: float = 10.0
    preemphasis: float = 0.97
    n_filters: int = 26
    n_ceps: int = 13
    log_floor: float = 1e-10
    low_hz: float = 0.0
    high_hz: float | None = None
    mean_norm: bool = False


@dataclass(frozen=True)
class MfccGrid:
    """Coefficients (n_ceps x frames) plus the framing they came from."""

    coeffs: np.ndarray
    shift_ms: float = 10.0
    frame_ms: float = 25.0

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[1]


# ---------------------------------------------------------------- WAV

def read_wav(path) -> WavSignal:
    """Read 16-bit PCM WAV; stereo is averaged down to mono."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, nframes = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(nframes)
    except (wave.Error, EOFError) as e:
        raise AudioError(f"{path}: not a PCM WAV file ({e})") from e
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    expected = nframes * channels * width
    if len(raw) < expected:
        raise AudioError(f"{path}: truncated data chunk ({len(raw)} of {expected} bytes)")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm.reshape(-1, channels).mean(axis=1)
    return WavSignal(rate, pcm)


def wav_bytes(signal: WavSignal) -> bytes:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())
    return buf.getvalue()


def write_wav(path, signal: WavSignal) -> None:
    atomic_write_bytes(path, wav_bytes(signal))


# ---------------------------------------------------------------- framing

def frame_params(sample_rate: int, cfg: MfccConfig = MfccConfig()) -> tuple[int, int]:
    win = int(round(cfg.frame_ms * sample_rate / 1000))
    hop = int(round(cfg.shift_ms * sample_rate / 1000))
    return win, hop


def frame_count(num_samples: int, sample_rate: int, cfg: MfccConfig = MfccConfig()) -> int:
    win, hop = frame_params(sample_rate, cfg)
    if num_samples < win:
        return 1
    return (num_samples - win) // hop + 1


def frame_signal(samples: np.ndarray, sample_rate: int, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Frames as rows (F, win); short signals are zero-padded to one window."""
    win, hop = frame_params(sample_rate, cfg)
    if len(samples) < win:
        samples = np.concatenate([samples, np.zeros(win - len(samples))])
    n = frame_count(len(samples), sample_rate, cfg)
    return np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:n]


# ---------------------------------------------------------------- filterbank / DCT

def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@lru_cache(maxsize=32)
def mel_filterbank(n_filters: int, nfft: int, sample_rate: int,
                   low_hz: float = 0.0, high_hz: float | None = None) -> np.ndarray:
    """Triangular filters (n_filters, nfft//2 + 1) with edges equally spaced in mel."""
    high_hz = sample_rate / 2 if high_hz is None else high_hz
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_filters, len(freqs)))
    for m in range(n_filters):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; ``dct_matrix(n) @ x`` transforms x."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


# ---------------------------------------------------------------- MFCC

def log_mel_to_mfcc(log_mel: np.ndarray, n_ceps: int = 13) -> np.ndarray:
    """(F, n_filters) log energies -> (F, n_ceps) cepstra."""
    return log_mel @ dct_matrix(log_mel.shape[-1])[:n_ceps].T


def extract_mfcc(signal: WavSignal, cfg: MfccConfig = MfccConfig()) -> MfccGrid:
    frames = frame_signal(signal.samples, signal.sample_rate, cfg)
    emph = frames.copy()
    emph[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    win = frames.shape[1]
    emph *= np.hamming(win)
    nfft = next_pow2(win)
    power = np.abs(np.fft.rfft(emph, nfft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_filters, nfft, signal.sample_rate, cfg.low_hz, cfg.high_hz)
    log_mel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    ceps = log_mel_to_mfcc(log_mel, cfg.n_ceps)
    if cfg.mean_norm:
        ceps = ceps - ceps.mean(axis=0, keepdims=True)
    return MfccGrid(np.ascontiguousarray(ceps.T), cfg.shift_ms, cfg.frame_ms)


def slice_utterance(grid: MfccGrid, start_sec: float, end_sec: float) -> MfccGrid:
    """Frames whose start time lies in [start_sec, end_sec); empty -> one zero frame."""
    if not 0 <= start_sec < end_sec:
        raise ValueError(f"invalid interval [{start_sec}, {end_sec})")
    shift = grid.shift_ms / 1000.0
    starts = np.arange(grid.n_frames) * shift
    # tolerate float noise in k * shift
    keep = (starts >= start_sec - 1e-9) & (starts < end_sec - 1e-9)
    coeffs = grid.coeffs[:, keep]
    if coeffs.shape[1] == 0:
        coeffs = np.zeros((grid.coeffs.shape[0], 1))
    return MfccGrid(coeffs, grid.shift_ms, grid.frame_ms)


# ---------------------------------------------------------------- cache file

def mfcc_bytes(grid: MfccGrid) -> bytes:
    n, F = grid.coeffs.shape
    header = MFCC_MAGIC + struct.pack("<III", MFCC_VERSION, n, F)
    return header + grid.coeffs.T.astype("<f4").tobytes()


def save_mfcc(path, grid: MfccGrid) -> None:
    atomic_write_bytes(path, mfcc_bytes(grid))


def load_mfcc(path) -> MfccGrid:
    raw = Path(path).read_bytes()
    if raw[:4] != MFCC_MAGIC or len(raw) < 16:
        raise AudioError(f"{path}: not an MFCC cache file")
    version, n, F = struct.unpack("<III", raw[4:16])
    if version != MFCC_VERSION:
        raise AudioError(f"{path}: unsupported MFCC cache version {version}")
    body = raw[16:]
    if len(body) != 4 * n * F:
        raise AudioError(f"{path}: payload is {len(body)} bytes, expected {4 * n * F}")
    coeffs = np.frombuffer(body, dtype="<f4").reshape(F, n).T.astype(np.float64)
    return MfccGrid(coeffs)
