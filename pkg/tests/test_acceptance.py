"""Acceptance criteria 1 to 9, one PASS/FAIL line each.

Criteria 1, 2, 4, 7 and 8 need the 7-image angiogram dataset in the
``<id>.png`` / ``<id>_gt.png`` layout. Point ``VESSELGROW_DATASET`` at it
(default ``data/angiograms`` under the repository root). Without it those
criteria fail with an explanatory message; the ``surrogate`` tests run the
same checks on synthetic scenes and are not substitutes for the criteria.

The full-dataset runs take roughly 30 minutes per leave-one-image-out pass
on one core; set ``VESSELGROW_THREADS`` to train trees in parallel.
"""
import contextlib
import json
import os
from pathlib import Path

import numpy as np
import pytest

from vesselgrow import cli
from vesselgrow.element import UNRESOLVED, segment_detailed
from vesselgrow.featureset import extract_stack
from vesselgrow.filters import (
    DiffusionParams,
    HESSIAN_NAMES,
    anisotropic_diffusion,
    gray_dilate,
    gray_erode,
    hessian_planes,
    kuwahara,
    light_sobel,
    make_b1,
    make_b2,
    window_stats,
)
from vesselgrow.evaluation import roc_auc
from vesselgrow.forest import load_model
from vesselgrow.imaging import load_dataset
from vesselgrow.synthetic import synthetic_dataset, write_dataset

import oracles
from conftest import ACCEPTANCE_LINES, random_images
from scenes import curve_scene, tiered_model

ROOT = Path(__file__).resolve().parents[1]
DATASET = Path(os.environ.get("VESSELGROW_DATASET", ROOT / "data" / "angiograms"))


@contextlib.contextmanager
def criterion(n, title):
    detail = []
    try:
        yield detail
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        _record(n, title, False, msg)
        raise
    _record(n, title, True, "; ".join(detail))


def _record(n, title, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)


def _require_dataset():
    entries = load_dataset(DATASET) if DATASET.is_dir() else []
    if len(entries) != 7:
        pytest.fail(
            f"angiogram dataset not available at {DATASET} "
            f"(found {len(entries)} image pairs, need 7); set VESSELGROW_DATASET"
        )
    return entries


def _aggregate(path):
    return json.loads(path.read_text())["aggregate"]


# -- 1 ----------------------------------------------------------------------------

def test_criterion_1_table_reproduction():
    with criterion(1, "loio on the 7-image dataset: Acc>=94.0, AUC>=0.94, TNR>=95.5, TPR>=66") as d:
        entries, out = full_run_cached()
        agg = _aggregate(out / "metrics.json")
        assert len(entries) == 7
        assert agg["confusion"]["tp"] + agg["confusion"]["tn"] + agg["confusion"]["fp"] \
            + agg["confusion"]["fn"] == 1835008
        d.append(f"Acc {100 * agg['accuracy']:.2f} AUC {agg['auc']:.4f} "
                 f"TNR {100 * agg['tnr']:.2f} TPR {100 * agg['tpr']:.2f}")
        assert agg["accuracy"] >= 0.940, d[-1]
        assert agg["auc"] >= 0.94, d[-1]
        assert agg["tnr"] >= 0.955, d[-1]
        assert agg["tpr"] >= 0.66, d[-1]


# the dataset run is shared between criteria 1, 2, 7 and 8 without making the
# criterion context depend on fixture setup (which would bypass the FAIL line)
_RUN = {}


def full_run_cached():
    if "run" not in _RUN:
        entries = _require_dataset()
        import tempfile
        out = Path(tempfile.mkdtemp(prefix="vg-accept-")) / "run"
        code = cli.main(["loio", str(DATASET), str(out), "--ablation", "--seed", "0"])
        assert code == 0, f"loio exited with {code}"
        _RUN["run"] = (entries, out)
    return _RUN["run"]


# -- 2 ----------------------------------------------------------------------------

def test_criterion_2_connectivity_ablation():
    with criterion(2, "connectivity ablation lowers aggregate TPR by >= 2 points") as d:
        _, out = full_run_cached()
        base = _aggregate(out / "metrics.json")["tpr"]
        abl = _aggregate(out / "ablation" / "metrics.json")["tpr"]
        drop = 100 * (base - abl)
        d.append(f"TPR {100 * base:.2f} with, {100 * abl:.2f} without, drop {drop:.2f}")
        assert drop >= 2.0, d[-1]


def test_surrogate_1_2_synthetic_loio():
    """Same pipeline on noisy synthetic scenes: usable AUC, and connectivity matters."""
    from vesselgrow.element import ElementParams
    from vesselgrow.evaluation import leave_one_image_out
    from vesselgrow.forest import ForestParams
    from vesselgrow.imaging import DatasetEntry
    from vesselgrow.synthetic import synthetic_angiogram

    entries = [DatasetEntry(f"s{k}", *synthetic_angiogram(128, seed=40 + k, noise=20, contrast=35))
               for k in range(4)]
    stacks, fp = {}, ForestParams(n_trees=20, seed=1)
    with_conn = leave_one_image_out(entries, fp, subsample=0.3, stacks=stacks).aggregate
    without = leave_one_image_out(entries, fp, ElementParams(connectivity=False),
                                  subsample=0.3, stacks=stacks).aggregate
    assert with_conn.auc >= 0.9
    assert with_conn.tpr - without.tpr >= 0.02


# -- 3 ----------------------------------------------------------------------------

def test_criterion_3_filter_oracles():
    with criterion(3, "filters equal naive oracles on 100 random 16x16 images") as d:
        imgs = random_images(100, seed=303)
        b1, b2 = make_b1(), make_b2()
        worst = 0.0
        for k, img in enumerate(imgs):
            assert np.array_equal(window_stats(img), oracles.window_stats(img)), "window_stats"
            for se in (b1, b2):
                assert np.array_equal(gray_dilate(img, se), oracles.dilate(img, se.offsets)), "dilate"
                assert np.array_equal(gray_erode(img, se), oracles.erode(img, se.offsets)), "erode"
            a = (5, 10)[k % 2]
            assert np.array_equal(kuwahara(img, a), oracles.kuwahara(img, a)), "kuwahara"
            for t, dd in ((-10, 2), (-10, 5)):
                assert np.array_equal(light_sobel(img, t, dd), oracles.light_sobel(img, t, dd)), "light_sobel"
            p = (DiffusionParams(0.3, 4.0, 20), DiffusionParams(0.5, 3.0, 10),
                 DiffusionParams(2.0, 3.0, 35), DiffusionParams(0.8, 6.0, 40))[k % 4]
            diff = np.max(np.abs(anisotropic_diffusion(img, p)
                                 - oracles.diffusion(img, p.lam, p.kappa, p.iterations)))
            worst = max(worst, diff)
            assert diff <= 1e-6, f"diffusion differs by {diff}"
        d.append(f"exact matches; worst diffusion deviation {worst:.2e}")


# -- 4 ----------------------------------------------------------------------------

def _hessian_identity_error(img):
    p = dict(zip(HESSIAN_NAMES, hessian_planes(img)))
    e_tr = np.max(np.abs(p["hess_l1"] + p["hess_l2"] - p["hess_tr"]))
    e_det = np.max(np.abs(p["hess_l1"] * p["hess_l2"] - p["hess_det"]))
    ordered = bool(np.all(p["hess_l1"] <= p["hess_l2"]))
    return e_tr, e_det, ordered


def test_criterion_4_hessian_algebra():
    with criterion(4, "Hessian eigenvalue sum/product identities on every dataset pixel") as d:
        entries = _require_dataset()
        worst = 0.0
        for e in entries:
            e_tr, e_det, ordered = _hessian_identity_error(e.image)
            worst = max(worst, e_tr, e_det)
            assert e_tr <= 1e-6 and e_det <= 1e-6, f"{e.image_id}: {e_tr}, {e_det}"
            assert ordered, f"{e.image_id}: l1 > l2 somewhere"
        d.append(f"worst deviation {worst:.2e}")


def test_surrogate_4_hessian_synthetic():
    for e in synthetic_dataset(7, 128, seed=4):
        e_tr, e_det, ordered = _hessian_identity_error(e.image)
        assert e_tr <= 1e-6 and e_det <= 1e-6 and ordered


# -- 5 ----------------------------------------------------------------------------

def test_criterion_5_morphological_duality():
    with criterion(5, "erosion equals 255 - dilation(255 - I) for B1 and B2") as d:
        for img in random_images(100, seed=505):
            for se in (make_b1(), make_b2()):
                assert np.array_equal(gray_erode(img, se), 255 - gray_dilate(255 - img, se))
        d.append("100 images x 2 elements")


# -- 6 ----------------------------------------------------------------------------

def test_criterion_6_auc_oracle():
    with criterion(6, "trapezoidal AUC equals pairwise concordance within 1e-9") as d:
        gen = np.random.default_rng(606)
        worst, heavy = 0.0, 0
        for k in range(200):
            n = int(gen.integers(2, 51))
            levels = 2 + k % 4 if k % 2 == 0 else 10 ** 6
            heavy += levels < 10
            scores = gen.integers(0, levels, n) / levels
            labels = gen.random(n) < 0.5
            labels[0], labels[-1] = True, False
            err = abs(roc_auc(scores, labels) - oracles.pairwise_auc(scores, labels))
            worst = max(worst, err)
            assert err <= 1e-9
        d.append(f"200 instances ({heavy} with heavy ties), worst {worst:.1e}")


# -- 7 ----------------------------------------------------------------------------

def _run_artifacts(out):
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "run.json"
                   and "ablation" not in p.relative_to(out).parts)
    return {str(p.relative_to(out)): p.read_bytes() for p in files}


def test_criterion_7_determinism(tmp_path):
    with criterion(7, "two loio runs produce byte-identical masks, models and metrics") as d:
        _, out = full_run_cached()
        again = tmp_path / "again"
        assert cli.main(["loio", str(DATASET), str(again), "--seed", "0"]) == 0
        a, b = _run_artifacts(out), _run_artifacts(again)
        a["metrics.json"] = json.dumps(
            {k: v for k, v in json.loads(a["metrics.json"]).items() if k != "notes"})
        b["metrics.json"] = json.dumps(
            {k: v for k, v in json.loads(b["metrics.json"]).items() if k != "notes"})
        assert a.keys() == b.keys()
        differing = [k for k in a if a[k] != b[k]]
        assert not differing, f"differs: {differing[:5]}"
        d.append(f"{len(a)} artifacts identical")


def test_surrogate_7_determinism_synthetic(tmp_path):
    write_dataset(synthetic_dataset(3, 48, seed=7), tmp_path / "data")
    flags = ["--n-trees", "5", "--subsample", "0.3", "--seed", "3"]
    assert cli.main(["loio", str(tmp_path / "data"), str(tmp_path / "r1"), *flags]) == 0
    assert cli.main(["loio", str(tmp_path / "data"), str(tmp_path / "r2"), *flags]) == 0
    assert _run_artifacts(tmp_path / "r1") == _run_artifacts(tmp_path / "r2")


# -- 8 ----------------------------------------------------------------------------

def _termination_check(image, model, stack=None):
    res = segment_detailed(image, model, stack=stack)
    h, w = res.mask.shape
    return res.classifier_calls, 2 * h * w, int(np.count_nonzero(res.state.labels == UNRESOLVED))


def test_criterion_8_termination():
    with criterion(8, "segment uses <= 2*512*512 classifier calls and leaves nothing unresolved") as d:
        entries, out = full_run_cached()
        most = 0
        for e in entries:
            model = load_model(out / "models" / f"{e.image_id}.vgf")
            calls, bound, unresolved = _termination_check(e.image, model)
            most = max(most, calls)
            assert e.image.shape == (512, 512)
            assert calls <= bound, f"{e.image_id}: {calls} calls"
            assert unresolved == 0, f"{e.image_id}: {unresolved} unresolved"
        d.append(f"max {most} calls of {2 * 512 * 512}")


def test_surrogate_8_termination_synthetic(small_entries, small_model):
    for e in small_entries:
        calls, bound, unresolved = _termination_check(e.image, small_model)
        assert calls <= bound and unresolved == 0


# -- 9 ----------------------------------------------------------------------------

def test_criterion_9_brush_motion_scene():
    with criterion(9, "scripted tiered model on the 32x32 curve scene gives the expected mask") as d:
        img, blob, curve, distractor = curve_scene()
        expected = blob | curve
        res = segment_detailed(img, tiered_model(), stack=extract_stack(img))
        assert np.array_equal(res.mask, expected), \
            f"{int(np.count_nonzero(res.mask != expected))} pixels differ"
        missed = int(np.count_nonzero(expected & (res.phase1_proba < 0.5)))
        assert missed == int(curve.sum()) + int(np.count_nonzero(blob & (res.phase1_proba < 0.5)))
        d.append(f"{int(expected.sum())} vessel pixels; {missed} of them below 0.5 "
                 f"without connectivity")
