import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesselgrow.element import ElementParams
from vesselgrow.errors import DimensionError, ParamError, SingleClassError
from vesselgrow.evaluation import (
    Confusion,
    confusion,
    leave_one_image_out,
    rates,
    roc_auc,
    roc_curve,
)
from vesselgrow.forest import ForestParams
from vesselgrow.imaging import DatasetEntry

import oracles


def test_confusion_examples():
    truth = np.zeros(100, bool)
    truth[:10] = True
    c = confusion(truth, truth)
    assert c == Confusion(tp=10, tn=90, fp=0, fn=0)
    assert rates(c)[0] == 1.0
    c = confusion(np.zeros(100, bool), truth)
    assert (c.tn, c.fn) == (90, 10)
    assert rates(c) == (0.9, 0.0, 1.0)


def test_confusion_brute_force(rng):
    for _ in range(50):
        pred = rng.random((16, 16)) < 0.4
        truth = rng.random((16, 16)) < 0.3
        tally = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
        for p, t in zip(pred.ravel(), truth.ravel()):
            tally[("t" if p == t else "f") + ("p" if p else "n")] += 1
        assert confusion(pred, truth) == Confusion(**tally)


def test_confusion_shape_mismatch():
    with pytest.raises(DimensionError):
        confusion(np.zeros((2, 2)), np.zeros((3, 2)))


def test_rates_examples():
    acc, tpr, tnr = rates(Confusion(tp=739, tn=973, fp=27, fn=261))
    assert tpr == pytest.approx(0.739) and tnr == pytest.approx(0.973)
    assert acc == pytest.approx(1712 / 2000)
    assert rates(Confusion(tn=5))[1] is None
    assert rates(Confusion(tp=3, tn=4)) == (1.0, 1.0, 1.0)


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75


def test_auc_single_class():
    with pytest.raises(SingleClassError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle():
    gen = np.random.default_rng(17)
    for k in range(200):
        n = int(gen.integers(2, 51))
        levels = int(gen.choice([2, 3, 5, 1000]))
        scores = gen.integers(0, levels, n) / levels
        labels = gen.random(n) < 0.5
        labels[0], labels[1] = True, False
        assert abs(roc_auc(scores, labels) - oracles.pairwise_auc(scores, labels)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_properties(pairs):
    scores = np.array([s for s, _ in pairs], float)
    labels = np.array([l for _, l in pairs])
    if labels.all() or not labels.any():
        return
    auc = roc_auc(scores, labels)
    assert 0.0 <= auc <= 1.0
    # reversing the scores mirrors the area
    assert roc_auc(-scores, labels) == pytest.approx(1.0 - auc, abs=1e-12)
    # strictly increasing transforms leave it unchanged
    assert roc_auc(np.exp(scores), labels) == pytest.approx(auc, abs=1e-12)


def test_roc_curve_endpoints():
    fpr, tpr, thr = roc_curve([0.9, 0.4, 0.4, 0.1], [1, 0, 1, 0])
    assert (fpr[0], tpr[0]) == (0.0, 0.0) and (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_loio_trivial_entries():
    entries = [DatasetEntry(f"u{k}", np.full((12, 12), 100.0), np.zeros((12, 12), bool))
               for k in range(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = leave_one_image_out(entries, ForestParams(n_trees=2), subsample=1.0)
    assert report.aggregate.tnr == 1.0
    assert report.aggregate.tpr is None
    assert report.aggregate.auc is None
    assert set(report.per_image) == {"u0", "u1"}
    assert report.aggregate.confusion.total == 2 * 144


def test_loio_needs_two_images():
    with pytest.raises(ParamError):
        leave_one_image_out([DatasetEntry("a", np.zeros((4, 4)), np.zeros((4, 4), bool))])


def test_loio_synthetic(small_entries):
    folds = []
    report = leave_one_image_out(small_entries, ForestParams(n_trees=6, seed=2), subsample=0.5,
                                 on_fold=lambda i, m, r: folds.append(i))
    assert folds == [e.image_id for e in small_entries]
    total = sum(e.truth.size for e in small_entries)
    assert report.aggregate.confusion.total == total
    pooled = sum((m.confusion for m in report.per_image.values()), Confusion())
    assert pooled == report.aggregate.confusion
    assert report.aggregate.accuracy > 0.8
    assert "pooled" in report.table() and "mean of images" in report.table()
    again = leave_one_image_out(small_entries, ForestParams(n_trees=6, seed=2), subsample=0.5)
    assert again.to_json() == report.to_json()


def test_loio_ablation_runs(small_entries):
    report = leave_one_image_out(small_entries, ForestParams(n_trees=4, seed=2), subsample=0.5,
                                 ep=ElementParams(connectivity=False))
    assert report.aggregate is not None
