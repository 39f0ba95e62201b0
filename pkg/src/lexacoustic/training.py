"""Averaged SGD training with a stepwise learning-rate schedule."""
from __future__ import annotations

import dataclasses
from decimal import Decimal
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .corpus import SPLITS, Corpus, CorpusError
from .dsp import MfccConfig
from .model import FROZEN, KINDS, ModelDims, as_tensors, batch_loss, init_params, mfcc_stats, uses_acoustic, uses_lexical
from .pipeline import MfccStore, SplitData, build_split, make_batch, predict_probs
from .tensor import Tape
from .text import Vocabulary, build_vocab, load_embeddings

log = logging.getLogger(__name__)

CONFIG_ENV = "LEXACOUSTIC_CONFIG"


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    lr0: float = 0.11
    decay: float = 0.9
    decay_every: int = 2000
    batch_size: int = 50
    context_len: int = 3
    dropout: float = 0.5
    seed: int = 0
    averaging: bool = True
    average_start_epoch: int = 13
    dtype: str = "float32"
    grad_clip: float = 0.0
    weight_decay: float = 0.0
    tune_embeddings: bool = True
    embeddings: str = ""
    min_count: int = 1
    max_len: int = 100
    emb_dim: int = 300
    filter_widths: tuple[int, ...] = (3, 4, 5)
    feature_maps: int = 100
    hidden: int = 300
    am_feature_maps: int = 100
    am_filter_width: int = 5
    am_max_frames: int = 360
    am_pool: int = 18
    am_standardize: bool = True
    mfcc: MfccConfig = field(default_factory=MfccConfig)

    def __post_init__(self):
        for name in ("epochs", "lr0", "decay", "decay_every", "batch_size", "max_len", "emb_dim",
                     "feature_maps", "hidden", "am_feature_maps", "am_filter_width", "am_max_frames",
                     "am_pool", "average_start_epoch", "min_count"):
            if not getattr(self, name) > 0:
                raise ValueError(f"config: {name} must be positive, got {getattr(self, name)}")
        if self.context_len < 0:
            raise ValueError("config: context_len must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("config: dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("config: dtype must be float32 or float64")

    def dims(self, num_classes: int) -> ModelDims:
        return ModelDims(num_classes, self.emb_dim, tuple(self.filter_widths), self.feature_maps,
                         self.hidden, self.mfcc.n_ceps, self.am_feature_maps, self.am_filter_width,
                         self.am_max_frames, self.am_pool)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        if "mfcc" in d and isinstance(d["mfcc"], Mapping):
            d["mfcc"] = MfccConfig(**d["mfcc"])
        if "filter_widths" in d:
            d["filter_widths"] = tuple(d["filter_widths"])
        return cls(**d)


def _coerce(raw: str, kind):
    text = raw.strip()
    if kind in (bool, "bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in ("float | None",):
        return None if text.lower() in ("", "none") else float(text)
    if kind in ("tuple[int, ...]",):
        return tuple(int(x) for x in text.replace(",", " ").split())
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_pairs(pairs: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Apply string key/values to ``base``; ``mfcc.*`` keys address the MFCC settings."""
    base = base or TrainConfig()
    top = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    sub = {f.name: f.type for f in dataclasses.fields(MfccConfig)}
    updates, mfcc_updates = {}, {}
    for key, raw in pairs.items():
        if key.startswith("mfcc."):
            name = key[5:]
            if name not in sub:
                raise ValueError(f"unknown config key {key!r}")
            mfcc_updates[name] = _coerce(raw, sub[name])
        elif key in top and key != "mfcc":
            updates[key] = _coerce(raw, top[key])
        else:
            raise ValueError(f"unknown config key {key!r}")
    if mfcc_updates:
        updates["mfcc"] = dataclasses.replace(base.mfcc, **mfcc_updates)
    return dataclasses.replace(base, **updates)


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> TrainConfig:
    path = path or os.environ.get(CONFIG_ENV) or None
    pairs = {}
    if path:
        with open(path, encoding="utf-8") as f:
            pairs.update(parse_config_text(f.read()))
    pairs.update(overrides or {})
    return config_from_pairs(pairs)


# ---------------------------------------------------------------- optimizer

def lr_at(update_count: int, lr0: float = 0.11, decay: float = 0.9, every: int = 2000) -> float:
    if update_count < 0:
        raise ValueError("update count must be >= 0")
    # decimal product of the configured literals, so 0.11 * 0.9**2 logs as 0.0891
    k = update_count // every
    return float(Decimal(repr(float(lr0))) * Decimal(repr(float(decay))) ** k)


@dataclass
class AveragedState:
    params: dict[str, np.ndarray]
    average: dict[str, np.ndarray]
    count: int = 0
    updates: int = 0

    @classmethod
    def start(cls, params: Mapping[str, np.ndarray]) -> "AveragedState":
        return cls({k: np.array(v) for k, v in params.items()}, {k: np.array(v) for k, v in params.items()})

    def eval_params(self) -> dict[str, np.ndarray]:
        return self.average if self.count > 0 else self.params


def asgd_step(state: AveragedState, grads: Mapping[str, np.ndarray], lr: float,
              average: bool = True) -> AveragedState:
    """SGD update in place, then fold the new iterate into the running mean."""
    for name, g in grads.items():
        if g.shape != state.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} "
                             f"{state.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r} at update {state.updates}")
    for name, g in grads.items():
        p = state.params[name]
        p -= (lr * g).astype(p.dtype)
    state.updates += 1
    if average:
        state.count += 1
        for name, p in state.params.items():
            avg = state.average[name]
            avg += (p - avg) / state.count
    return state


# ---------------------------------------------------------------- training loop

@dataclass
class EpochLog:
    epoch: int
    updates: int
    lr: float
    train_loss: float
    val_acc: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.updates}\t{self.lr!r}\t{self.train_loss!r}\t{self.val_acc!r}"


@dataclass
class TrainResult:
    kind: str
    labels: tuple[str, ...]
    dims: ModelDims
    config: TrainConfig
    vocab: Vocabulary | None
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]
    best_epoch: int
    epochs: list[EpochLog]
    lr_trace: list[float]

    def log_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.epochs)


def prepare(kind: str, corpus: Corpus, cfg: TrainConfig, vocab: Vocabulary | None = None,
            store: MfccStore | None = None, splits=SPLITS) -> tuple[Vocabulary | None, dict[str, SplitData]]:
    if uses_lexical(kind) and vocab is None:
        vocab = build_vocab((u.tokens for u in corpus.utterances("train")), cfg.min_count)
    if uses_acoustic(kind) and store is None:
        store = MfccStore(corpus, cfg.mfcc)
    data = {
        name: build_split(corpus.split(name), corpus.labels, vocab if uses_lexical(kind) else None,
                          cfg.context_len, store if uses_acoustic(kind) else None,
                          cfg.max_len, cfg.am_max_frames)
        for name in splits
    }
    return vocab, data


def accuracy(kind, params, dims, data: SplitData) -> float:
    if len(data) == 0:
        return float("nan")
    probs = predict_probs(kind, params, dims, data)
    return float(np.mean(probs.argmax(axis=1) == data.labels))


def train(kind: str, corpus: Corpus, cfg: TrainConfig = TrainConfig(),
          store: MfccStore | None = None, data: dict[str, SplitData] | None = None,
          vocab: Vocabulary | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train one model kind; returns averaged final params plus the best-validation params.

    Dialog order is reshuffled every epoch; utterance order inside a dialog
    is kept so context windows stay valid.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if data is None:
        vocab, data = prepare(kind, corpus, cfg, vocab, store, splits=("train", "valid"))
    train_data, val_data = data["train"], data["valid"]
    if len(train_data) == 0:
        raise CorpusError("training split is empty")
    if len(val_data) == 0:
        raise CorpusError("validation split is empty")

    dtype = np.dtype(cfg.dtype)
    dims = cfg.dims(len(corpus.labels))
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    table = None
    if uses_lexical(kind):
        table = load_embeddings(cfg.embeddings or None, vocab, cfg.emb_dim, cfg.seed).vectors
    params = init_params(kind, dims, len(vocab) if vocab else 0, init_rng, table, dtype)
    if uses_acoustic(kind) and cfg.am_standardize:
        mu, sd = mfcc_stats(train_data.mfcc, train_data.mfcc_frames)
        params["ac.norm.mean"], params["ac.norm.std"] = mu.astype(dtype), sd.astype(dtype)
    state = AveragedState.start(params)
    frozen = set(FROZEN) if cfg.tune_embeddings else {"emb.table", *FROZEN}

    best_acc, best_epoch, best_params = -1.0, 0, None
    epochs: list[EpochLog] = []
    lr_trace: list[float] = []
    n_dialogs = len(train_data.dialog_spans)
    for epoch in range(1, cfg.epochs + 1):
        averaging = cfg.averaging and epoch >= cfg.average_start_epoch
        order = shuffle_rng.permutation(n_dialogs)
        targets = [i for d in order for i in range(*train_data.dialog_spans[d])]
        losses = []
        for start in range(0, len(targets), cfg.batch_size):
            batch = make_batch(kind, train_data, targets[start:start + cfg.batch_size])
            leaves = as_tensors(state.params, requires_grad=True)
            with Tape() as tape:
                loss = batch_loss(kind, batch, leaves, dims, cfg.dropout, True, drop_rng)
            names = [k for k in leaves if k not in frozen]
            grads = dict(zip(names, tape.gradient(loss, [leaves[k] for k in names])))
            if cfg.weight_decay:
                for k in names:
                    grads[k] = grads[k] + cfg.weight_decay * state.params[k]
            if cfg.grad_clip:
                norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
                if norm > cfg.grad_clip:
                    grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            lr = lr_at(state.updates, cfg.lr0, cfg.decay, cfg.decay_every)
            lr_trace.append(lr)
            asgd_step(state, grads, lr, average=averaging)
            losses.append(float(loss.data))
        eval_params = state.eval_params()
        val_acc = accuracy(kind, eval_params, dims, val_data)
        entry = EpochLog(epoch, state.updates, lr_at(state.updates, cfg.lr0, cfg.decay, cfg.decay_every),
                         float(np.mean(losses)), val_acc)
        epochs.append(entry)
        log.info("epoch %d  updates %d  loss %.4f  val_acc %.4f", epoch, state.updates, entry.train_loss, val_acc)
        if on_epoch:
            on_epoch(entry)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = {k: np.array(v) for k, v in eval_params.items()}

    final = {k: np.array(v) for k, v in state.eval_params().items()}
    return TrainResult(kind, tuple(corpus.labels), dims, cfg, vocab, final, best_params, best_epoch,
                       epochs, lr_trace)
