"""Turning corpus splits into model-ready arrays and running batched inference."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, CorpusError, Dialog, Utterance, window_indices
from .dsp import MfccConfig, extract_mfcc, load_mfcc, read_wav, slice_utterance
from .model import Batch, ModelDims, as_tensors, batch_logits, fit_frames, uses_acoustic, uses_lexical
from .tensor import softmax
from .text import Vocabulary, pad_ids


class MfccStore:
    """Per-utterance MFCC grids, computed once per audio file.

    If ``cache_dir`` holds ``<audio stem>.mfcc`` files (see ``extract-mfcc``)
    they are used instead of recomputing.
    """

    def __init__(self, corpus: Corpus, cfg: MfccConfig = MfccConfig(), cache_dir=None):
        self.corpus = corpus
        self.cfg = cfg
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._grids = {}

    def file_grid(self, path: Path):
        key = str(path)
        if key not in self._grids:
            cached = self.cache_dir / (path.stem + ".mfcc") if self.cache_dir else None
            if cached is not None and cached.exists():
                self._grids[key] = load_mfcc(cached)
            else:
                if not path.exists():
                    raise CorpusError(f"audio file {path} not found")
                self._grids[key] = extract_mfcc(read_wav(path), self.cfg)
        return self._grids[key]

    def grid_for(self, utt: Utterance) -> np.ndarray:
        path = self.corpus.audio_file(utt)
        if path is None:
            raise CorpusError(f"utterance {utt.dialog_id}/{utt.index} has no audio path")
        grid = self.file_grid(path)
        if utt.start_sec is not None:
            grid = slice_utterance(grid, utt.start_sec, utt.end_sec)
        return grid.coeffs


@dataclass
class SplitData:
    utterances: list[Utterance]
    labels: np.ndarray
    token_ids: list[np.ndarray]
    windows: list[tuple[int, ...]]
    dialog_spans: list[tuple[int, int]]
    mfcc: np.ndarray | None = None  # (N, 13, Fmax), zero-padded
    mfcc_frames: np.ndarray | None = None  # real frames per utterance, <= Fmax

    def __len__(self):
        return len(self.utterances)


def build_split(dialogs: Sequence[Dialog], labels: Sequence[str], vocab: Vocabulary | None,
                context_len: int, store: MfccStore | None = None, max_len: int = 100,
                max_frames: int = 360) -> SplitData:
    label_ix = {lab: i for i, lab in enumerate(labels)}
    utts = [u for d in dialogs for u in d.utterances]
    spans, base = [], 0
    for d in dialogs:
        spans.append((base, base + len(d)))
        base += len(d)
    ids = [np.array(pad_ids(vocab.encode(u.tokens), max_len)) for u in utts] if vocab else []
    mfcc = frames = None
    if store is not None and utts:
        grids = [store.grid_for(u) for u in utts]
        frames = np.array([min(g.shape[1], max_frames) for g in grids])
        mfcc = np.stack([fit_frames(g, max_frames) for g in grids])
    return SplitData(
        utterances=utts,
        labels=np.array([label_ix[u.label] for u in utts], dtype=np.int64),
        token_ids=ids,
        windows=window_indices([len(d) for d in dialogs], context_len),
        dialog_spans=spans,
        mfcc=mfcc,
        mfcc_frames=frames,
    )


def make_batch(kind: str, data: SplitData, targets: Sequence[int]) -> Batch:
    targets = list(targets)
    batch = Batch(labels=data.labels[targets])
    if uses_lexical(kind):
        wins = [data.windows[t] for t in targets]
        needed = sorted({i for w in wins for i in w})
        local = {u: k for k, u in enumerate(needed)}
        lengths = np.array([len(data.token_ids[u]) for u in needed])
        ids = np.zeros((len(needed), lengths.max()), dtype=np.int64)
        for k, u in enumerate(needed):
            ids[k, :lengths[k]] = data.token_ids[u]
        L = max(len(w) for w in wins)
        win_arr = np.zeros((len(wins), L), dtype=np.int64)
        for b, w in enumerate(wins):
            win_arr[b, :len(w)] = [local[u] for u in w]
        batch.token_ids, batch.lengths = ids, lengths
        batch.windows, batch.window_lengths = win_arr, np.array([len(w) for w in wins])
    if uses_acoustic(kind):
        batch.mfcc = data.mfcc[targets]
        batch.mfcc_frames = data.mfcc_frames[targets]
    return batch


def predict_probs(kind: str, params, dims: ModelDims, data: SplitData, batch_size: int = 100) -> np.ndarray:
    """Class probabilities (N, C) for every utterance, in dialog order, eval mode."""
    tensors = as_tensors(params)
    out = np.zeros((len(data), dims.num_classes))
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        logits = batch_logits(kind, make_batch(kind, data, idx), tensors, dims)
        out[start:start + len(idx)] = softmax(logits).data
    return out
