"""Dialog corpora: tab-separated utterance records, splits, statistics, context windows.

Record layout (one utterance per line, UTF-8, tab-separated)::

    dialogId  index  speaker  label  startSec  endSec  audioPath  token1  token2 ...

``startSec``/``endSec`` may both be empty when no timing is known;
``audioPath`` may be empty and is resolved relative to the corpus directory.
A corpus directory holds ``labels.txt`` (one label per line) and either
``train.tsv``/``valid.tsv``/``test.tsv`` or ``corpus.tsv`` plus a
``splits.tsv`` manifest of ``dialogId<TAB>split`` lines.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

from .io_utils import atomic_write_text
from .text import QMARK

SPLITS = ("train", "valid", "test")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    dialog_id: str
    index: int
    speaker: str
    tokens: tuple[str, ...]
    label: str
    start_sec: float | None = None
    end_sec: float | None = None
    audio_path: str = ""
    word_times: tuple[tuple[float, float], ...] | None = None

    def to_record(self) -> str:
        def num(x):
            return "" if x is None else repr(float(x))
        fields = [self.dialog_id, str(self.index), self.speaker, self.label,
                  num(self.start_sec), num(self.end_sec), self.audio_path, *self.tokens]
        return "\t".join(fields)


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    utterances: tuple[Utterance, ...]

    def __len__(self):
        return len(self.utterances)


@dataclass
class Corpus:
    labels: tuple[str, ...]
    splits: dict[str, list[Dialog]] = field(default_factory=dict)
    root: Path | None = None

    def split(self, name: str) -> list[Dialog]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}; expected one of {SPLITS}")
        return self.splits.get(name, [])

    def utterances(self, name: str) -> list[Utterance]:
        return [u for d in self.split(name) for u in d.utterances]

    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def audio_file(self, utt: Utterance) -> Path | None:
        if not utt.audio_path:
            return None
        p = Path(utt.audio_path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def map_tokens(self, fn) -> "Corpus":
        """Copy with ``fn`` applied to every utterance's token tuple."""
        splits = {
            name: [Dialog(d.dialog_id, tuple(replace(u, tokens=tuple(fn(u.tokens))) for u in d.utterances))
                   for d in dialogs]
            for name, dialogs in self.splits.items()
        }
        return Corpus(self.labels, splits, self.root)

    def without_question_marks(self) -> "Corpus":
        return self.map_tokens(lambda toks: [t for t in toks if t != QMARK])


# ---------------------------------------------------------------- parsing

def parse_record(line: str, where: str, labels: set[str]) -> Utterance:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 7:
        raise CorpusError(f"{where}: expected at least 7 tab-separated fields, got {len(parts)}")
    dialog_id, index, speaker, label, start, end, audio = parts[:7]
    if not dialog_id:
        raise CorpusError(f"{where}: empty dialogId")
    try:
        idx = int(index)
    except ValueError:
        raise CorpusError(f"{where}: utterance index {index!r} is not an integer") from None
    if label not in labels:
        raise CorpusError(f"{where}: unknown label {label!r}")
    if bool(start) != bool(end):
        raise CorpusError(f"{where}: startSec and endSec must both be given or both be empty")
    s = e = None
    if start:
        try:
            s, e = float(start), float(end)
        except ValueError:
            raise CorpusError(f"{where}: non-numeric time in {start!r}/{end!r}") from None
        if s < 0 or not e > s:
            raise CorpusError(f"{where}: endSec {e} must exceed startSec {s} (and startSec >= 0)")
    tokens = tuple(t for t in parts[7:] if t)
    return Utterance(dialog_id, idx, speaker, tokens, label, s, e, audio)


def _read_records(path: Path, labels: set[str]) -> list[Utterance]:
    utts = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            utts.append(parse_record(line, f"{path}:{lineno}", labels))
    return utts


def _group(utts: list[Utterance], where: str) -> list[Dialog]:
    by_dialog: dict[str, list[Utterance]] = {}
    seen = set()
    for u in utts:
        key = (u.dialog_id, u.index)
        if key in seen:
            raise CorpusError(f"{where}: duplicate utterance (dialog {u.dialog_id!r}, index {u.index})")
        seen.add(key)
        by_dialog.setdefault(u.dialog_id, []).append(u)
    return [Dialog(did, tuple(sorted(us, key=lambda u: u.index))) for did, us in by_dialog.items()]


def load_corpus(path, require_audio: bool = False) -> Corpus:
    root = Path(path)
    label_file = root / "labels.txt"
    if not label_file.exists():
        raise CorpusError(f"{root}: missing labels.txt")
    labels = tuple(line.strip() for line in label_file.read_text(encoding="utf-8").splitlines() if line.strip())
    if len(set(labels)) != len(labels):
        raise CorpusError(f"{label_file}: duplicate labels")
    label_set = set(labels)

    splits: dict[str, list[Dialog]] = {}
    if (root / "corpus.tsv").exists():
        utts = _read_records(root / "corpus.tsv", label_set)
        manifest = {}
        with open(root / "splits.tsv", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or parts[1] not in SPLITS:
                    raise CorpusError(f"{root / 'splits.tsv'}:{lineno}: expected 'dialogId<TAB>train|valid|test'")
                manifest[parts[0]] = parts[1]
        missing = {u.dialog_id for u in utts} - manifest.keys()
        if missing:
            raise CorpusError(f"{root}: dialogs without a split: {sorted(missing)[:5]}")
        for name in SPLITS:
            splits[name] = _group([u for u in utts if manifest[u.dialog_id] == name], str(root / "corpus.tsv"))
    else:
        for name in SPLITS:
            f = root / f"{name}.tsv"
            splits[name] = _group(_read_records(f, label_set), str(f)) if f.exists() else []

    owner: dict[str, str] = {}
    for name, dialogs in splits.items():
        for d in dialogs:
            if d.dialog_id in owner:
                raise CorpusError(f"dialog {d.dialog_id!r} appears in both {owner[d.dialog_id]} and {name}")
            owner[d.dialog_id] = name

    corpus = Corpus(labels, splits, root)
    if require_audio:
        check_audio(corpus)
    return corpus


def check_audio(corpus: Corpus) -> None:
    for name in SPLITS:
        for u in corpus.utterances(name):
            f = corpus.audio_file(u)
            if f is None:
                raise CorpusError(f"{name}: utterance {u.dialog_id}/{u.index} has no audio path")
            if not f.exists():
                raise CorpusError(f"{name}: utterance {u.dialog_id}/{u.index}: audio file {f} not found")


def save_corpus(corpus: Corpus, path) -> None:
    root = Path(path)
    atomic_write_text(root / "labels.txt", "".join(lab + "\n" for lab in corpus.labels))
    for name in SPLITS:
        lines = [u.to_record() + "\n" for d in corpus.split(name) for u in d.utterances]
        atomic_write_text(root / f"{name}.tsv", "".join(lines))


# ---------------------------------------------------------------- statistics

@dataclass
class SplitStats:
    n_dialogs: int
    n_utterances: int
    histogram: dict[str, int]
    majority_label: str | None
    majority_pct: float | None
    vocab_size: int | None = None


def stats(corpus: Corpus) -> dict[str, SplitStats]:
    out = {}
    for name in SPLITS:
        utts = corpus.utterances(name)
        hist = Counter(u.label for u in utts)
        histogram = {lab: hist.get(lab, 0) for lab in corpus.labels}
        if utts:
            # first label in label-set order wins ties
            major = max(corpus.labels, key=lambda lab: histogram[lab])
            pct = 100.0 * histogram[major] / len(utts)
        else:
            major, pct = None, None
        vocab = len({t for u in utts for t in u.tokens}) if name == "train" else None
        out[name] = SplitStats(len(corpus.split(name)), len(utts), histogram, major, pct, vocab)
    return out


def format_stats(corpus: Corpus, summary: dict[str, SplitStats] | None = None) -> str:
    summary = summary or stats(corpus)
    tr = summary["train"]
    lines = [f"C = {len(corpus.labels)}   |V| = {tr.vocab_size}",
             f"{'split':<7}{'dialogs':>9}{'utts':>8}  majority"]
    for name in SPLITS:
        s = summary[name]
        maj = "-" if s.majority_pct is None else f"{s.majority_label} {s.majority_pct:.1f}%"
        lines.append(f"{name:<7}{s.n_dialogs:>9}{s.n_utterances:>8}  {maj}")
    lines.append("")
    width = max([5] + [len(lab) + 1 for lab in corpus.labels])
    lines.append(f"{'label':<{width}}" + "".join(f"{n:>8}" for n in SPLITS))
    for lab in corpus.labels:
        lines.append(f"{lab:<{width}}" + "".join(f"{summary[n].histogram[lab]:>8}" for n in SPLITS))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- context

def window_indices(dialog_lengths: Sequence[int], n: int) -> list[tuple[int, ...]]:
    """Windows as index tuples into the flattened (dialog-order) utterance list."""
    if n < 0:
        raise ValueError("context length must be >= 0")
    windows = []
    base = 0
    for length in dialog_lengths:
        for k in range(length):
            windows.append(tuple(range(base + max(0, k - n), base + k + 1)))
        base += length
    return windows


def context_windows(dialogs: Sequence[Dialog], n: int) -> Iterator[tuple[Utterance, ...]]:
    """Each utterance with up to ``n`` predecessors from its own dialog, target last."""
    if n < 0:
        raise ValueError("context length must be >= 0")
    for d in dialogs:
        utts = d.utterances
        for k in range(len(utts)):
            yield utts[max(0, k - n):k + 1]
