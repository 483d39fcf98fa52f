"""Pixel metrics, ROC analysis and the leave-one-image-out experiment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .element import ElementParams, segment_detailed
from .errors import DimensionError, ParamError, SingleClassError
from .featureset import DEFAULT_CONN_DROPOUT, LabeledDataset, build_training_rows, extract_stack
from .forest import ForestParams, train


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn,
                         self.fp + other.fp, self.fn + other.fn)


def confusion(pred, truth) -> Confusion:
    """Pixel counts with vessel as the positive class."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return Confusion(tp, tn, fp, fn)


def _ratio(num, den):
    return num / den if den else None


def rates(c: Confusion):
    """``(accuracy, tpr, tnr)``; a rate with an empty denominator is ``None``."""
    return (
        _ratio(c.tp + c.tn, c.total),
        _ratio(c.tp, c.tp + c.fn),
        _ratio(c.tn, c.tn + c.fp),
    )


def _roc_counts(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC analysis needs both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    # last index of every block of tied scores
    ends = np.flatnonzero(np.diff(s) != 0)
    ends = np.append(ends, s.size - 1)
    tps = np.cumsum(lab, dtype=np.int64)[ends]
    fps = (ends + 1) - tps
    return s[ends], tps, fps, n_pos, n_neg


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr, thresholds)`` starting at ``(0, 0)``."""
    thr, tps, fps, n_pos, n_neg = _roc_counts(scores, labels)
    fpr = np.concatenate([[0.0], fps / n_neg])
    tpr = np.concatenate([[0.0], tps / n_pos])
    return fpr, tpr, np.concatenate([[np.inf], thr])


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores form one diagonal step."""
    _, tps, fps, n_pos, n_neg = _roc_counts(scores, labels)
    tps = np.concatenate([[0], tps]).astype(np.float64)
    fps = np.concatenate([[0], fps]).astype(np.float64)
    area2 = np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1]))
    return float(area2 / (2.0 * n_pos * n_neg))


# -- reports ------------------------------------------------------------------

@dataclass
class ImageMetrics:
    confusion: Confusion
    accuracy: float | None
    tpr: float | None
    tnr: float | None
    auc: float | None

    @classmethod
    def from_predictions(cls, mask, proba, truth):
        c = confusion(mask, truth)
        acc, tpr, tnr = rates(c)
        try:
            auc = roc_auc(proba, truth)
        except SingleClassError:
            auc = None
        return cls(c, acc, tpr, tnr, auc)

    def as_dict(self):
        return {
            "accuracy": self.accuracy, "tpr": self.tpr, "tnr": self.tnr, "auc": self.auc,
            "confusion": {"tp": self.confusion.tp, "tn": self.confusion.tn,
                          "fp": self.confusion.fp, "fn": self.confusion.fn},
        }


@dataclass
class MetricsReport:
    per_image: dict = field(default_factory=dict)
    aggregate: ImageMetrics | None = None
    notes: list = field(default_factory=list)
    # pooled (probabilities, truth) over all folds, for ROC export
    pooled_scores: tuple | None = field(default=None, repr=False)

    def image_mean(self) -> dict:
        """Unweighted mean of the per-image rates (undefined values skipped)."""
        out = {}
        for key in ("accuracy", "tpr", "tnr", "auc"):
            vals = [getattr(m, key) for m in self.per_image.values()]
            vals = [v for v in vals if v is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def as_dict(self):
        return {
            "per_image": {k: v.as_dict() for k, v in self.per_image.items()},
            "aggregate": self.aggregate.as_dict() if self.aggregate else None,
            "image_mean": self.image_mean(),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        def pct(v):
            return "    n/a" if v is None else f"{100 * v:7.2f}"

        def auc(v):
            return "   n/a" if v is None else f"{v:6.4f}"

        lines = [f"{'image':<16} {'TP(%)':>7} {'TN(%)':>7} {'Acc(%)':>7} {'AUC':>6}"]
        for image_id, m in self.per_image.items():
            lines.append(f"{image_id:<16} {pct(m.tpr)} {pct(m.tnr)} {pct(m.accuracy)} {auc(m.auc)}")
        mean = self.image_mean()
        lines.append(f"{'mean of images':<16} {pct(mean['tpr'])} {pct(mean['tnr'])} "
                     f"{pct(mean['accuracy'])} {auc(mean['auc'])}")
        if self.aggregate is not None:
            a = self.aggregate
            lines.append(f"{'pooled':<16} {pct(a.tpr)} {pct(a.tnr)} {pct(a.accuracy)} {auc(a.auc)}")
        lines.extend(self.notes)
        return "\n".join(lines)

    def summary_line(self) -> str:
        a = self.aggregate

        def pct(v):
            return "n/a" if v is None else f"{100 * v:.2f}"

        return (f"TP {pct(a.tpr)}%  TN {pct(a.tnr)}%  Acc {pct(a.accuracy)}%  "
                f"AUC {'n/a' if a.auc is None else f'{a.auc:.4f}'}")


def leave_one_image_out(entries, fp: ForestParams = ForestParams(),
                        ep: ElementParams = ElementParams(), subsample: float = 0.1,
                        balanced: bool = False, conn_dropout: float = DEFAULT_CONN_DROPOUT, stacks: dict | None = None,
                        on_fold=None, log=None) -> MetricsReport:
    """Train on all images but one, segment the held-out image, and pool the scores.

    ``ep.connectivity=False`` zeroes the connectivity features in training as
    well as inference. ``on_fold(image_id, model, element_result)`` is called
    after every fold; ``stacks`` may map image ids to precomputed feature stacks.
    """
    entries = list(entries)
    if len(entries) < 2:
        raise ParamError("leave-one-image-out needs at least two images")
    stacks = {} if stacks is None else stacks
    for e in entries:
        if e.image_id not in stacks:
            if log:
                log(f"extracting features for {e.image_id}")
            stacks[e.image_id] = extract_stack(e.image, e.image_id)
    rows = {
        e.image_id: build_training_rows(e, subsample, fp.seed, stacks[e.image_id],
                                        balanced=balanced, connectivity=ep.connectivity,
                                        conn_dropout=conn_dropout)
        for e in entries
    }

    report = MetricsReport()
    pooled = Confusion()
    probas, truths = [], []
    for held in entries:
        train_ds = LabeledDataset.concat(rows[e.image_id] for e in entries if e is not held)
        if log:
            log(f"fold {held.image_id}: training on {len(train_ds)} rows")
        model = train(train_ds, fp)
        res = segment_detailed(held.image, model, ep, stacks[held.image_id])
        metrics = ImageMetrics.from_predictions(res.mask, res.proba, held.truth)
        report.per_image[held.image_id] = metrics
        pooled = pooled + metrics.confusion
        probas.append(res.proba.ravel())
        truths.append(held.truth.ravel())
        if on_fold is not None:
            on_fold(held.image_id, model, res)

    acc, tpr, tnr = rates(pooled)
    all_p = np.concatenate(probas)
    all_t = np.concatenate(truths)
    try:
        auc = roc_auc(all_p, all_t)
    except SingleClassError:
        auc = None
    report.aggregate = ImageMetrics(pooled, acc, tpr, tnr, auc)
    report.pooled_scores = (all_p, all_t)
    return report
