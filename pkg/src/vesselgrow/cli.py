"""Command-line entry point: ``vesselgrow {extract,train,segment,loio,dump-plane}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .element import ElementParams, segment_detailed
from .errors import VesselGrowError
from .evaluation import leave_one_image_out, roc_curve
from .featureset import (
    DEFAULT_CONN_DROPOUT,
    GREY_NAMES,
    LabeledDataset,
    build_training_rows,
    drop_connectivity,
    extract_stack,
    grey_plane,
    read_csv,
    write_csv,
)
from .forest import ForestParams, load_model, oob_error, save_model, train
from .imaging import load_dataset, load_gray, save_gray, save_mask, save_proba16

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("vesselgrow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _forest_args(p):
    g = p.add_argument_group("forest")
    g.add_argument("--n-trees", type=int, default=100)
    g.add_argument("--mtry", type=int, default=5)
    g.add_argument("--max-depth", type=int, default=None)
    g.add_argument("--min-leaf", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)


def _element_args(p):
    g = p.add_argument_group("region growing")
    g.add_argument("--seed-threshold", type=float, default=0.9)
    g.add_argument("--grow-threshold", type=float, default=0.5)
    g.add_argument("--radial-radius", type=int, default=7)


def _sampling_args(p, subsample):
    g = p.add_argument_group("training rows")
    g.add_argument("--subsample", type=float, default=subsample)
    g.add_argument("--balanced", action="store_true",
                   help="equal vessel/background counts instead of uniform sampling")
    g.add_argument("--conn-dropout", type=float, default=DEFAULT_CONN_DROPOUT,
                   help="fraction of training rows with connectivity zeroed")
    g.add_argument("--no-connectivity", action="store_true",
                   help="zero both connectivity features in training and inference")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vesselgrow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vesselgrow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="write one feature CSV per dataset image")
    p.add_argument("dataset_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balanced", action="store_true")

    p = sub.add_parser("train", help="train a forest from CSVs or a dataset directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", type=Path, nargs="+", help="feature CSV files")
    src.add_argument("--dataset", type=Path, help="dataset directory")
    p.add_argument("--held-out", help="image id excluded from training (with --dataset)")
    p.add_argument("--model-out", type=Path, required=True)
    _forest_args(p)
    _sampling_args(p, subsample=0.1)

    p = sub.add_parser("segment", help="segment one image with a trained model")
    p.add_argument("image", type=Path)
    p.add_argument("model", type=Path)
    p.add_argument("mask_out", type=Path)
    p.add_argument("--proba-out", type=Path, help="16-bit PNG of the probability plane")
    p.add_argument("--no-connectivity", action="store_true")
    _element_args(p)

    p = sub.add_parser("loio", help="leave-one-image-out evaluation")
    p.add_argument("dataset_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--ablation", action="store_true",
                   help="also rerun with connectivity features disabled and compare TPR")
    _forest_args(p)
    _element_args(p)
    _sampling_args(p, subsample=0.1)

    p = sub.add_parser("dump-plane", help="write one feature plane as an 8-bit PNG")
    p.add_argument("image", type=Path)
    p.add_argument("plane")
    p.add_argument("out_png", type=Path)
    return parser


# -- helpers ------------------------------------------------------------------

def _forest_params(a) -> ForestParams:
    return ForestParams(n_trees=a.n_trees, mtry=a.mtry, max_depth=a.max_depth,
                        min_leaf=a.min_leaf, seed=a.seed)


def _element_params(a) -> ElementParams:
    return ElementParams(seed_threshold=a.seed_threshold, grow_threshold=a.grow_threshold,
                         radial_radius=a.radial_radius,
                         connectivity=not getattr(a, "no_connectivity", False))


def _manifest(args, params: dict, outputs, path: Path):
    doc = {
        "tool": "vesselgrow",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "params": params,
        "outputs": [str(o) for o in outputs],
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    os.replace(tmp, path)


def _fresh_dir(target: Path) -> Path:
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise UsageError(f"output directory {target} exists and is not empty")
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))


def _commit_dir(tmp: Path, target: Path):
    if target.exists():
        target.rmdir()
    os.replace(tmp, target)


# -- commands -----------------------------------------------------------------

def cmd_extract(a) -> int:
    entries = load_dataset(a.dataset_dir)
    a.out_dir.mkdir(parents=True, exist_ok=True)
    if not entries:
        log.warning("no images found in %s", a.dataset_dir)
    outputs = []
    for e in entries:
        ds = build_training_rows(e, a.subsample, a.seed, balanced=a.balanced)
        path = a.out_dir / f"{e.image_id}.csv"
        write_csv(ds, path)
        log.info("%s: %d rows -> %s", e.image_id, len(ds), path)
        outputs.append(path)
    params = {"subsample": a.subsample, "seed": a.seed, "balanced": a.balanced,
              "dataset_dir": str(a.dataset_dir)}
    _manifest(a, params, outputs, a.out_dir / "run.json")
    print(f"wrote {len(outputs)} CSV file(s) to {a.out_dir}")
    return EXIT_OK


def cmd_train(a) -> int:
    fp = _forest_params(a)
    if a.csv:
        if a.held_out:
            raise UsageError("--held-out only applies with --dataset")
        ds = LabeledDataset.concat(read_csv(p) for p in a.csv)
        if a.no_connectivity:
            ds = drop_connectivity(ds, 1.0)
        elif a.conn_dropout > 0:
            ds = drop_connectivity(ds, a.conn_dropout, a.seed)
    else:
        entries = load_dataset(a.dataset)
        if a.held_out is not None and a.held_out not in {e.image_id for e in entries}:
            raise UsageError(f"--held-out {a.held_out!r} is not an image id in {a.dataset}")
        ds = LabeledDataset.concat(
            build_training_rows(e, a.subsample, a.seed, balanced=a.balanced,
                                connectivity=not a.no_connectivity,
                                conn_dropout=a.conn_dropout)
            for e in entries if e.image_id != a.held_out
        )
    log.info("training %d trees on %d rows", fp.n_trees, len(ds))
    model = train(ds, fp)
    a.model_out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, a.model_out)
    oob = oob_error(model, ds.X, ds.label)
    print(f"model: {model.n_trees} trees, {model.n_features} features, "
          f"{len(model.feature)} nodes; out-of-bag error {oob:.4f}")
    params = {"forest": asdict(fp), "rows": len(ds), "subsample": a.subsample,
              "balanced": a.balanced, "conn_dropout": a.conn_dropout,
              "connectivity": not a.no_connectivity, "held_out": a.held_out,
              "sources": [str(p) for p in a.csv] if a.csv else str(a.dataset),
              "oob_error": oob}
    _manifest(a, params, [a.model_out], a.model_out.parent / "run.json")
    return EXIT_OK


def cmd_segment(a) -> int:
    ep = _element_params(a)
    img = load_gray(a.image)
    model = load_model(a.model)
    res = segment_detailed(img, model, ep)
    a.mask_out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(res.mask, a.mask_out)
    outputs = [a.mask_out]
    if a.proba_out:
        save_proba16(res.proba, a.proba_out)
        outputs.append(a.proba_out)
    print(f"{a.image}: {int(res.mask.sum())} vessel pixels of {res.mask.size} "
          f"({res.classifier_calls} classifier calls)")
    _manifest(a, {"element": asdict(ep), "model": str(a.model), "image": str(a.image)},
              outputs, a.mask_out.parent / "run.json")
    return EXIT_OK


def _run_loio(entries, a, ep, out: Path, stacks):
    fp = _forest_params(a)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "proba").mkdir(exist_ok=True)
    (out / "models").mkdir(exist_ok=True)

    def on_fold(image_id, model, res):
        save_mask(res.mask, out / "masks" / f"{image_id}_mask.png")
        save_proba16(res.proba, out / "proba" / f"{image_id}_proba.png")
        save_model(model, out / "models" / f"{image_id}.vgf")
        log.info("fold %s done", image_id)

    report = leave_one_image_out(
        entries, fp, ep, subsample=a.subsample, balanced=a.balanced,
        conn_dropout=a.conn_dropout if ep.connectivity else 0.0,
        stacks=stacks, on_fold=on_fold, log=log.info,
    )
    (out / "metrics.json").write_text(report.to_json() + "\n")
    if report.pooled_scores is not None and report.aggregate.auc is not None:
        fpr, tpr, thr = roc_curve(*report.pooled_scores)
        with open(out / "roc.csv", "w") as fh:
            fh.write("fpr,tpr,threshold\n")
            for f, t, h in zip(fpr.tolist(), tpr.tolist(), thr.tolist()):
                fh.write(f"{f!r},{t!r},{h!r}\n")
    return report


def cmd_loio(a) -> int:
    entries = load_dataset(a.dataset_dir)
    if len(entries) < 2:
        raise UsageError(f"loio needs at least 2 images, found {len(entries)} in {a.dataset_dir}")
    ep = _element_params(a)
    tmp = _fresh_dir(a.out_dir)
    try:
        stacks = {}
        report = _run_loio(entries, a, ep, tmp, stacks)
        params = {"forest": asdict(_forest_params(a)), "element": asdict(ep),
                  "subsample": a.subsample, "balanced": a.balanced,
                  "conn_dropout": a.conn_dropout, "dataset_dir": str(a.dataset_dir),
                  "images": [e.image_id for e in entries]}
        if a.ablation and ep.connectivity:
            abl_ep = ElementParams(ep.seed_threshold, ep.grow_threshold, ep.radial_radius, False)
            abl = _run_loio(entries, a, abl_ep, tmp / "ablation", stacks)
            base_tpr, abl_tpr = report.aggregate.tpr, abl.aggregate.tpr
            if base_tpr is None or abl_tpr is None:
                note = "connectivity ablation: TPR undefined, drop not measurable"
            else:
                drop = 100.0 * (base_tpr - abl_tpr)
                flag = "" if drop >= 2.0 else "  [FLAG: drop below 2 points]"
                note = (f"connectivity ablation: TPR {100 * abl_tpr:.2f}% without vs "
                        f"{100 * base_tpr:.2f}% with, drop {drop:.2f} points{flag}")
            report.notes.append(note)
            params["ablation"] = abl.as_dict()["aggregate"]
            (tmp / "metrics.json").write_text(report.to_json() + "\n")
        _manifest(a, params, ["masks/", "proba/", "models/", "metrics.json", "roc.csv"],
                  tmp / "run.json")
        _commit_dir(tmp, a.out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(report.table())
    print(f"This work (leave one image out): {report.summary_line()}")
    return EXIT_OK


def cmd_dump_plane(a) -> int:
    if a.plane not in GREY_NAMES:
        raise UsageError(f"unknown plane {a.plane!r}; valid names: {', '.join(GREY_NAMES)}")
    plane = grey_plane(load_gray(a.image), a.plane)
    lo, hi = float(plane.min()), float(plane.max())
    scaled = np.zeros_like(plane) if hi == lo else (plane - lo) * (255.0 / (hi - lo))
    a.out_png.parent.mkdir(parents=True, exist_ok=True)
    save_gray(scaled, a.out_png)
    _manifest(a, {"plane": a.plane, "image": str(a.image), "min": lo, "max": hi},
              [a.out_png], a.out_png.parent / "run.json")
    print(f"{a.plane}: range [{lo:g}, {hi:g}] -> {a.out_png}")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "train": cmd_train,
    "segment": cmd_segment,
    "loio": cmd_loio,
    "dump-plane": cmd_dump_plane,
}


def _configure_threads():
    env = os.environ.get("VESSELGROW_THREADS")
    if not env:
        return
    import numba

    numba.set_num_threads(max(1, min(int(env), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _configure_threads()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vesselgrow {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VesselGrowError, OSError, ValueError) as exc:
        print(f"vesselgrow {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print(f"vesselgrow {args.command}: interrupted", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"vesselgrow {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
