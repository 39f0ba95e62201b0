"""Accuracy, per-class precision/recall/F1, confusion matrices and the two analyses.

Undefined precision or recall (zero denominator) is ``None`` and is
printed as ``-``; it is never folded in as 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, Utterance
from .model import ModelDims
from .pipeline import SplitData, predict_probs
from .text import QMARK


class LabelSetError(ValueError):
    pass


@dataclass
class EvalReport:
    labels: tuple[str, ...]
    confusion: np.ndarray  # rows gold, columns predicted
    name: str = ""

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float | None:
        return None if self.n == 0 else float(np.trace(self.confusion)) / self.n

    def precision(self, k: int) -> float | None:
        col = self.confusion[:, k].sum()
        return None if col == 0 else float(self.confusion[k, k] / col)

    def recall(self, k: int) -> float | None:
        row = self.confusion[k].sum()
        return None if row == 0 else float(self.confusion[k, k] / row)

    def f1(self, k: int) -> float | None:
        p, r = self.precision(k), self.recall(k)
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def per_class(self) -> dict[str, dict[str, float | None]]:
        return {lab: {"P": self.precision(k), "R": self.recall(k), "F1": self.f1(k)}
                for k, lab in enumerate(self.labels)}

    def rows(self, model: str | None = None) -> list[tuple[str, str, str, float | None]]:
        """Machine-readable (metric, class, model, value) records."""
        model = model or self.name or "-"
        out = [("n", "*", model, float(self.n)), ("accuracy", "*", model, self.accuracy)]
        for lab, m in self.per_class().items():
            for metric in ("P", "R", "F1"):
                out.append((metric, lab, model, m[metric]))
        for i, gold in enumerate(self.labels):
            for j, pred in enumerate(self.labels):
                out.append((f"confusion:{pred}", gold, model, float(self.confusion[i, j])))
        return out

    def table(self) -> str:
        acc = "-" if self.accuracy is None else f"{100 * self.accuracy:.1f}"
        lines = [f"{self.name or 'model'}: accuracy {acc}% over {self.n} utterances",
                 f"{'class':<14}{'P':>7}{'R':>7}{'F1':>7}{'gold':>7}"]
        for k, (lab, m) in enumerate(self.per_class().items()):
            lines.append(f"{lab:<14}" + "".join(f"{_fmt(m[x]):>7}" for x in ("P", "R", "F1"))
                         + f"{int(self.confusion[k].sum()):>7}")
        return "\n".join(lines) + "\n"


def _fmt(x: float | None, digits: int = 2) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def format_rows(rows: Sequence[tuple[str, str, str, float | None]]) -> str:
    return "".join(f"{m}\t{c}\t{model}\t{'' if v is None else repr(float(v))}\n" for m, c, model, v in rows)


def parse_rows(text: str) -> list[tuple[str, str, str, float | None]]:
    out = []
    for line in text.splitlines():
        if line.strip():
            m, c, model, v = line.split("\t")
            out.append((m, c, model, float(v) if v else None))
    return out


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def report_from_predictions(labels: Sequence[str], gold, pred, name: str = "") -> EvalReport:
    return EvalReport(tuple(labels), confusion_matrix(gold, pred, len(labels)), name)


# ---------------------------------------------------------------- model-level

@dataclass
class Predictions:
    """Per-utterance predictions for one split, in dialog order."""

    utterances: list[Utterance]
    gold: np.ndarray
    pred: np.ndarray
    probs: np.ndarray
    labels: tuple[str, ...]


def predict_split(kind: str, params, dims: ModelDims, labels: Sequence[str], data: SplitData,
                  model_labels: Sequence[str] | None = None) -> Predictions:
    if model_labels is not None and tuple(model_labels) != tuple(labels):
        raise LabelSetError(f"model labels {tuple(model_labels)} do not match corpus labels {tuple(labels)}")
    if dims.num_classes != len(labels):
        raise LabelSetError(f"model has {dims.num_classes} classes, corpus has {len(labels)}")
    probs = predict_probs(kind, params, dims, data)
    return Predictions(list(data.utterances), data.labels, probs.argmax(axis=1), probs, tuple(labels))


def evaluate(preds: Predictions, name: str = "") -> EvalReport:
    return report_from_predictions(preds.labels, preds.gold, preds.pred, name)


def subset_report(preds: Predictions, keep: Callable[[Utterance], bool], name: str = "") -> EvalReport:
    """Report over the utterances matching ``keep``; context still came from the full split."""
    mask = np.array([bool(keep(u)) for u in preds.utterances], dtype=bool)
    if len(mask) == 0:
        mask = np.zeros(0, dtype=bool)
    return report_from_predictions(preds.labels, preds.gold[mask], preds.pred[mask], name)


def has_question_mark(u: Utterance) -> bool:
    return QMARK in u.tokens


def single_word(word: str) -> Callable[[Utterance], bool]:
    return lambda u: tuple(u.tokens) == (word,)


# ---------------------------------------------------------------- single-word analysis

@dataclass
class SingleWordReport:
    """P/R/F1 for class x word subclasses, one block per model."""

    words: tuple[str, ...]
    classes: tuple[str, ...]
    reports: dict[tuple[str, str], EvalReport] = field(default_factory=dict)  # (model, word) -> report

    def value(self, model: str, word: str, cls: str, metric: str) -> float | None:
        rep = self.reports[(model, word)]
        return rep.per_class()[cls][metric]

    def rows(self) -> list[tuple[str, str, str, float | None]]:
        out = []
        for (model, word), rep in self.reports.items():
            out.append(("n", word, model, float(rep.n)))
            for cls in self.classes:
                for metric in ("P", "R", "F1"):
                    out.append((metric, f"{cls}-{word}", model, self.value(model, word, cls, metric)))
        return out

    def table(self) -> str:
        models = list(dict.fromkeys(m for m, _ in self.reports))
        blocks = []
        for word in self.words:
            lines = [f"DA-{word.capitalize():<12}{'model':<10}{'P':>6}{'R':>6}{'F1':>6}{'n':>6}"]
            for cls in self.classes:
                for model in models:
                    rep = self.reports[(model, word)]
                    k = rep.labels.index(cls)
                    vals = "".join(f"{_fmt(self.value(model, word, cls, m)):>6}" for m in ("P", "R", "F1"))
                    lines.append(f"{cls:<15}{model:<10}{vals}{int(rep.confusion[k].sum()):>6}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def single_word_report(predictions: Mapping[str, Predictions], words: Sequence[str] = ("right", "yeah"),
                       classes: Sequence[str] = ("STATEMENT", "BACKCHANNEL")) -> SingleWordReport:
    out = SingleWordReport(tuple(words), tuple(classes))
    for model, preds in predictions.items():
        missing = [c for c in classes if c not in preds.labels]
        if missing:
            raise LabelSetError(f"classes {missing} are not in the label set {preds.labels}")
        for word in words:
            out.reports[(model, word)] = subset_report(preds, single_word(word), f"{model}-{word}")
    return out


# ---------------------------------------------------------------- question-mark ablation

@dataclass
class AblationReport:
    """Overall and question-subset accuracy, per model, with and without ``?``."""

    question_label: str
    overall: dict[tuple[str, str], EvalReport] = field(default_factory=dict)   # (model, condition)
    question: dict[tuple[str, str], EvalReport] = field(default_factory=dict)

    CONDITIONS = ("with", "removed")

    def accuracy(self, model: str, condition: str, subset: str = "question") -> float | None:
        table = self.question if subset == "question" else self.overall
        return table[(model, condition)].accuracy

    def rows(self) -> list[tuple[str, str, str, float | None]]:
        out = []
        for (model, cond), rep in self.overall.items():
            out.append((f"accuracy:{cond}", "*", model, rep.accuracy))
        for (model, cond), rep in self.question.items():
            out.append((f"accuracy:{cond}", self.question_label, model, rep.accuracy))
            out.append((f"n:{cond}", self.question_label, model, float(rep.n)))
        return out

    def table(self) -> str:
        models = list(dict.fromkeys(m for m, _ in self.question))

        def pct(x):
            return "-" if x is None else f"{100 * x:.1f}"
        lines = [f"{self.question_label} utterances containing '?' (accuracy %)",
                 f"{'model':<10}{'with ?':>10}{'? removed':>12}"]
        for m in models:
            lines.append(f"{m:<10}{pct(self.accuracy(m, 'with')):>10}{pct(self.accuracy(m, 'removed')):>12}")
        lines += ["", "overall accuracy (%)", f"{'model':<10}{'with ?':>10}{'? removed':>12}"]
        for m in models:
            lines.append(f"{m:<10}{pct(self.accuracy(m, 'with', 'overall')):>10}"
                         f"{pct(self.accuracy(m, 'removed', 'overall')):>12}")
        return "\n".join(lines) + "\n"


def ablation_question_mark(corpus: Corpus, cfg, kinds: Sequence[str] = ("lm", "lam"),
                           question_label: str = "QUESTION", store=None,
                           on_epoch=None) -> AblationReport:
    """Train each model kind on the original and on the ``?``-stripped transcripts
    (same seed), and score both on the test split.

    The question subset is fixed by the original transcripts: gold
    ``question_label`` utterances whose tokens contained ``?``.
    """
    from .pipeline import MfccStore
    from .training import prepare, train

    if question_label not in corpus.labels:
        raise LabelSetError(f"question label {question_label!r} is not in the label set")
    store = store or MfccStore(corpus, cfg.mfcc)
    stripped = corpus.without_question_marks()
    marked = {(u.dialog_id, u.index) for u in corpus.utterances("test")
              if u.label == question_label and has_question_mark(u)}
    report = AblationReport(question_label)
    for condition, source in (("with", corpus), ("removed", stripped)):
        for kind in kinds:
            vocab, data = prepare(kind, source, cfg, store=store)
            result = train(kind, source, cfg, data=data, vocab=vocab, on_epoch=on_epoch)
            preds = predict_split(kind, result.params, result.dims, source.labels, data["test"])
            name = kind.upper()
            report.overall[(name, condition)] = evaluate(preds, name)
            report.question[(name, condition)] = subset_report(
                preds, lambda u: (u.dialog_id, u.index) in marked, name)
    return report
