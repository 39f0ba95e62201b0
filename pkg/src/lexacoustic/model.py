"""Lexical (LM), acoustic (AM) and fused lexico-acoustic (LAM) classifiers.

All forward functions are pure in the parameters: they take a mapping of
name -> :class:`Tensor` and build tape records only when a tape is active.

Parameter names::

    emb.table                     (V, d)
    lex.filter.w{w}, lex.bias.w{w} (K, d, w), (K,)     one pair per filter width
    ctx.lstm.W{i,f,o,g}, .b{...}  (H, D + H), (H,)
    ctx.attn.W                    (H,)
    ac.filter, ac.bias            (K_a, 13, w_a), (K_a,)
    ac.norm.mean, ac.norm.std     (13,), (13,)   frozen input standardization
    head.W, head.b                (C, rep), (C,)
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .io_utils import atomic_write_bytes
from .tensor import Tensor

KINDS = ("lm", "am", "lam")
FROZEN = ("ac.norm.mean", "ac.norm.std")
CKPT_MAGIC = b"DACT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    num_classes: int
    emb_dim: int = 300
    filter_widths: tuple[int, ...] = (3, 4, 5)
    feature_maps: int = 100
    hidden: int = 300
    n_mfcc: int = 13
    am_feature_maps: int = 100
    am_filter_width: int = 5
    am_max_frames: int = 360
    am_pool: int = 18

    @property
    def lexical_dim(self) -> int:
        return len(self.filter_widths) * self.feature_maps

    @property
    def acoustic_dim(self) -> int:
        return self.am_feature_maps * math.ceil(self.am_max_frames / self.am_pool)

    def rep_dim(self, kind: str) -> int:
        return {"lm": self.hidden, "am": self.acoustic_dim, "lam": self.hidden + self.acoustic_dim}[kind]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelDims":
        d = dict(d)
        d["filter_widths"] = tuple(d["filter_widths"])
        return cls(**d)


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    label: int


def uses_lexical(kind: str) -> bool:
    return kind in ("lm", "lam")


def uses_acoustic(kind: str) -> bool:
    return kind in ("am", "lam")


def init_params(kind: str, dims: ModelDims, vocab_size: int, rng: np.random.Generator,
                embeddings: np.ndarray | None = None, dtype=np.float32) -> dict[str, np.ndarray]:
    """Random initial parameters: Glorot-uniform weights, zero biases."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")

    def uni(shape, fan_in, fan_out):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    p: dict[str, np.ndarray] = {}
    if uses_lexical(kind):
        if embeddings is None:
            embeddings = rng.uniform(-0.25, 0.25, size=(vocab_size, dims.emb_dim))
            embeddings[0] = 0.0
        if embeddings.shape != (vocab_size, dims.emb_dim):
            raise T.ShapeError(f"embedding table {embeddings.shape} vs ({vocab_size}, {dims.emb_dim})")
        p["emb.table"] = np.array(embeddings)
        for w in dims.filter_widths:
            p[f"lex.filter.w{w}"] = uni((dims.feature_maps, dims.emb_dim, w), dims.emb_dim * w, dims.feature_maps * w)
            p[f"lex.bias.w{w}"] = np.zeros(dims.feature_maps)
        H, D = dims.hidden, dims.lexical_dim
        for g in T.LSTM_GATES:
            p[f"ctx.lstm.W{g}"] = uni((H, D + H), D + H, H)
            p[f"ctx.lstm.b{g}"] = np.zeros(H)
        p["ctx.attn.W"] = uni((H,), H, 1)
    if uses_acoustic(kind):
        w = dims.am_filter_width
        p["ac.filter"] = uni((dims.am_feature_maps, dims.n_mfcc, w), dims.n_mfcc * w, dims.am_feature_maps * w)
        p["ac.bias"] = np.zeros(dims.am_feature_maps)
        p["ac.norm.mean"] = np.zeros(dims.n_mfcc)
        p["ac.norm.std"] = np.ones(dims.n_mfcc)
    rep = dims.rep_dim(kind)
    p["head.W"] = uni((dims.num_classes, rep), rep, dims.num_classes)
    p["head.b"] = np.zeros(dims.num_classes)
    return {k: v.astype(dtype) for k, v in p.items()}


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


# ---------------------------------------------------------------- encoders

def encode_lexical(grids: Tensor, params: Mapping[str, Tensor], dims: ModelDims,
                   lengths: np.ndarray | None = None) -> Tensor:
    """Per-utterance vectors p (N, widths*maps) from grids (N, d, T).

    ``lengths`` marks the real columns of each grid; the rest is padding
    that never wins the max. A single (d, T) grid gives a (widths*maps,) vector.
    """
    single = grids.data.ndim == 2
    if single:
        grids = T.reshape(grids, (1,) + grids.shape)
    if grids.shape[1] != dims.emb_dim:
        raise T.ShapeError(f"lexical grid has {grids.shape[1]} rows, expected {dims.emb_dim}")
    maps = []
    for w in dims.filter_widths:
        conv = T.conv_time_batch(grids, params[f"lex.filter.w{w}"], params[f"lex.bias.w{w}"])
        maps.append(T.max_pool_time(T.relu(conv), lengths))
    p = T.concat(maps, axis=-1)
    return T.reshape(p, (p.shape[-1],)) if single else p


def roa_context(seqs: Tensor, params: Mapping[str, Tensor], lengths: np.ndarray | None = None,
                ) -> tuple[Tensor, np.ndarray]:
    """LSTM over each window, then attention-weighted sum of its hidden states.

    seqs: (B, L, D) left-aligned windows, ``lengths`` (B,) real steps per
    window (defaults to L). Returns (l (B, H), alpha (B, L)). A 2-D (L, D)
    input is treated as one window.
    """
    single = seqs.data.ndim == 2
    if single:
        seqs = T.reshape(seqs, (1,) + seqs.shape)
    B, L, _ = seqs.shape
    if L < 1:
        raise T.ShapeError("roa_context: empty window")
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    H = params["ctx.lstm.Wi"].shape[0]
    h = c = Tensor(np.zeros((B, H), dtype=seqs.dtype))
    W, b = T.fuse_lstm_gates(params)
    states = []
    for t in range(L):
        h, c = T.lstm_step_fused(seqs[:, t, :], h, c, W, b)
        states.append(h)
    ctx, alpha = attend(T.stack(states, axis=1), params["ctx.attn.W"], lengths)
    if single:
        return T.reshape(ctx, (H,)), alpha.data[0]
    return ctx, alpha.data


def attend(hs: Tensor, w: Tensor, lengths: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scores w.h, softmax over the real steps, weighted sum of hidden states.

    hs: (B, L, H). Returns (context (B, H), alpha (B, L)).
    """
    B, L, _ = hs.shape
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    scores = T.sum_(T.mul(hs, w), axis=-1)
    alpha = T.softmax(scores, np.arange(L)[None, :] < lengths[:, None])
    ctx = T.sum_(T.mul(T.reshape(alpha, (B, L, 1)), hs), axis=1)
    return ctx, alpha


def fit_frames(mfcc: np.ndarray, max_frames: int) -> np.ndarray:
    """Zero-pad or truncate the frame axis (last) to ``max_frames``."""
    F = mfcc.shape[-1]
    if F >= max_frames:
        return mfcc[..., :max_frames]
    pad = [(0, 0)] * (mfcc.ndim - 1) + [(0, max_frames - F)]
    return np.pad(mfcc, pad)


def encode_acoustic(mfcc: np.ndarray | Tensor, params: Mapping[str, Tensor], dims: ModelDims,
                    frames: np.ndarray | None = None) -> Tensor:
    """Acoustic vectors (B, maps * ceil(Fmax/pool)) from MFCC grids (B, 13, F).

    The first ``frames[b]`` frames of each grid (default: all) are
    standardized with ``ac.norm.*``; grids are then zero-padded or truncated
    to ``am_max_frames``. Pooled values are laid out map-major.
    """
    data = mfcc.data if isinstance(mfcc, Tensor) else np.asarray(mfcc)
    single = data.ndim == 2
    if single:
        data = data[None]
    if data.shape[1] != dims.n_mfcc:
        raise T.ShapeError(f"MFCC grid has {data.shape[1]} rows, expected {dims.n_mfcc}")
    filt = params["ac.filter"]
    frames = np.full(len(data), data.shape[2]) if frames is None else np.asarray(frames)
    if "ac.norm.mean" in params:
        mu = params["ac.norm.mean"].data[None, :, None]
        sd = params["ac.norm.std"].data[None, :, None]
        valid = np.arange(data.shape[2])[None, None, :] < frames[:, None, None]
        data = np.where(valid, (data - mu) / sd, 0.0)
    x = Tensor(fit_frames(data, dims.am_max_frames).astype(filt.dtype))
    conv = T.relu(T.conv_time_batch(x, filt, params["ac.bias"]))   # (B, K, Fmax)
    B, K, F = conv.shape
    # each map is a Fmax x 1 column pooled with an (am_pool, 1) window
    pooled = T.max_pool_window(T.reshape(conv, (B, K, F, 1)), (dims.am_pool, 1))
    out = T.reshape(pooled, (B, K * pooled.shape[2]))
    return T.reshape(out, (out.shape[1],)) if single else out


def mfcc_stats(grids, frames) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient mean and std over the real frames of (N, 13, F) grids."""
    cols = np.concatenate([g[:, :n] for g, n in zip(grids, frames)], axis=1)
    sd = cols.std(axis=1)
    return cols.mean(axis=1), np.where(sd > 1e-8, sd, 1.0)


# ---------------------------------------------------------------- batched forward

@dataclass
class Batch:
    """Model inputs for B classification targets.

    ``token_ids``/``lengths`` hold the N distinct utterances referenced by
    ``windows`` (B, L) (left-aligned, padded with 0, ``window_lengths`` real).
    """

    labels: np.ndarray
    token_ids: np.ndarray | None = None
    lengths: np.ndarray | None = None
    windows: np.ndarray | None = None
    window_lengths: np.ndarray | None = None
    mfcc: np.ndarray | None = None
    mfcc_frames: np.ndarray | None = None


def representation(kind: str, batch: Batch, params: Mapping[str, Tensor], dims: ModelDims) -> Tensor:
    parts = []
    if uses_lexical(kind):
        grids = T.embedding_grid(params["emb.table"], batch.token_ids)
        p = encode_lexical(grids, params, dims, batch.lengths)
        seqs = T.take_rows(p, batch.windows)
        ctx, _ = roa_context(seqs, params, batch.window_lengths)
        parts.append(ctx)
    if uses_acoustic(kind):
        parts.append(encode_acoustic(batch.mfcc, params, dims, batch.mfcc_frames))
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)


def batch_logits(kind: str, batch: Batch, params: Mapping[str, Tensor], dims: ModelDims,
                 dropout: float = 0.0, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    rep = representation(kind, batch, params, dims)
    rep = T.dropout(rep, dropout, training, rng)
    return T.linear(rep, params["head.W"], params["head.b"])


def batch_loss(kind: str, batch: Batch, params: Mapping[str, Tensor], dims: ModelDims,
               dropout: float = 0.0, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    logits = batch_logits(kind, batch, params, dims, dropout, training, rng)
    return T.softmax_cross_entropy(logits, batch.labels)


# ---------------------------------------------------------------- single-example API

def _stack_grids(grids: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([g.shape[1] for g in grids])
    out = np.zeros((len(grids), grids[0].shape[0], lengths.max()), dtype=grids[0].dtype)
    for k, g in enumerate(grids):
        out[k, :, :g.shape[1]] = g
    return out, lengths


def lexical_context(window: Sequence[np.ndarray], params: Mapping[str, Tensor], dims: ModelDims) -> Tensor:
    """l_t for one window of embedding grids (oldest first, target last)."""
    if not window:
        raise T.ShapeError("empty context window")
    dtype = params["head.W"].dtype
    grids, lengths = _stack_grids([np.asarray(g, dtype=dtype) for g in window])
    p = encode_lexical(Tensor(grids), params, dims, lengths)
    ctx, _ = roa_context(p, params)
    return ctx


def _predict(rep: Tensor, params: Mapping[str, Tensor]) -> Prediction:
    logits = T.linear(rep, params["head.W"], params["head.b"])
    probs = T.softmax(logits).data
    return Prediction(np.array(probs), int(np.argmax(probs)))


def forward_lm(window: Sequence[np.ndarray], params: Mapping[str, Tensor], dims: ModelDims) -> Prediction:
    return _predict(lexical_context(window, params, dims), params)


def forward_am(mfcc: np.ndarray, params: Mapping[str, Tensor], dims: ModelDims) -> Prediction:
    return _predict(encode_acoustic(mfcc, params, dims), params)


def forward_lam(window: Sequence[np.ndarray], mfcc: np.ndarray, params: Mapping[str, Tensor],
                dims: ModelDims) -> Prediction:
    fused = T.concat([lexical_context(window, params, dims), encode_acoustic(mfcc, params, dims)])
    return _predict(fused, params)


# ---------------------------------------------------------------- checkpoint container

def checkpoint_bytes(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, checkpoint_bytes(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            body = raw[pos:pos + 4 * size]
            if len(body) != 4 * size:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(body, dtype="<f4").reshape(shape).copy()
            pos += 4 * size
    except struct.error as e:
        raise ValueError(f"{path}: truncated checkpoint ({e})") from None
    return out
