"""Run directories: checkpoints plus what is needed to reuse them.

Layout::

    final.dact   averaged parameters at the end of training
    best.dact    parameters of the best validation epoch
    vocab.txt    vocabulary (lexical models only)
    meta.json    model kind, label set, dimensions, training config
    train.log    epoch, updates, lr, trainLoss, valAcc (tab-separated)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io_utils import atomic_write_text
from .model import ModelDims, load_checkpoint, save_checkpoint
from .text import Vocabulary
from .training import TrainConfig, TrainResult


@dataclass
class LoadedModel:
    kind: str
    labels: tuple[str, ...]
    dims: ModelDims
    config: TrainConfig
    params: dict[str, np.ndarray]
    vocab: Vocabulary | None
    corpus: str | None = None


def save_run(result: TrainResult, out_dir, corpus_path=None) -> None:
    out = Path(out_dir)
    save_checkpoint(out / "final.dact", result.params)
    save_checkpoint(out / "best.dact", result.best_params)
    if result.vocab is not None:
        result.vocab.save(out / "vocab.txt")
    meta = {
        "kind": result.kind,
        "labels": list(result.labels),
        "dims": result.dims.to_dict(),
        "config": result.config.to_dict(),
        "best_epoch": result.best_epoch,
        "corpus": None if corpus_path is None else str(corpus_path),
    }
    atomic_write_text(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "train.log", result.log_text())


def load_run(run_dir, which: str = "final") -> LoadedModel:
    run = Path(run_dir)
    if which not in ("final", "best"):
        raise ValueError(f"checkpoint must be 'final' or 'best', got {which!r}")
    meta_file = run / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"{run}: no meta.json; not a run directory")
    meta = json.loads(meta_file.read_text(encoding="utf-8"))
    vocab = Vocabulary.load(run / "vocab.txt") if (run / "vocab.txt").exists() else None
    dtype = np.dtype(meta["config"].get("dtype", "float32"))
    params = {k: v.astype(dtype) for k, v in load_checkpoint(run / f"{which}.dact").items()}
    return LoadedModel(meta["kind"], tuple(meta["labels"]), ModelDims.from_dict(meta["dims"]),
                       TrainConfig.from_dict(meta["config"]), params, vocab, meta.get("corpus"))
