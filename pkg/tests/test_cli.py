import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from vesselgrow import cli
from vesselgrow.featureset import FEATURE_NAMES, read_csv
from vesselgrow.forest import load_model, save_model
from vesselgrow.imaging import load_gray
from vesselgrow.synthetic import synthetic_dataset, write_dataset

from scenes import constant_model

FAST = ["--n-trees", "3", "--subsample", "0.3", "--seed", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    write_dataset(synthetic_dataset(3, 40, seed=2), d)
    return d


@pytest.fixture(scope="module")
def model_path(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.vgf"
    assert cli.main(["train", "--dataset", str(dataset), "--held-out", "syn0",
                     "--model-out", str(out), *FAST]) == 0
    return out


def test_version():
    res = subprocess.run([sys.executable, "-m", "vesselgrow", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "vesselgrow" in res.stdout


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["segment"])
    assert exc.value.code == 1


def test_extract(dataset, tmp_path):
    out = tmp_path / "csv"
    assert cli.main(["extract", str(dataset), str(out)]) == 0
    csvs = sorted(p.name for p in out.glob("*.csv"))
    assert csvs == ["syn0.csv", "syn1.csv", "syn2.csv"]
    assert len(read_csv(out / "syn1.csv")) == 40 * 40
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["command"] == "extract" and manifest["params"]["subsample"] == 1.0


def test_extract_empty_dir(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    assert cli.main(["extract", str(tmp_path / "empty"), str(tmp_path / "o")]) == 0
    assert not list((tmp_path / "o").glob("*.csv"))
    assert "no images" in caplog.text


def test_extract_bad_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert cli.main(["extract", str(missing), str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_train_deterministic(dataset, model_path, tmp_path):
    again = tmp_path / "again.vgf"
    assert cli.main(["train", "--dataset", str(dataset), "--held-out", "syn0",
                     "--model-out", str(again), *FAST]) == 0
    assert again.read_bytes() == model_path.read_bytes()
    model = load_model(again)
    assert model.n_features == 30 and model.feature_names == FEATURE_NAMES


def test_train_from_csv(dataset, tmp_path):
    out = tmp_path / "csv"
    cli.main(["extract", str(dataset), str(out), "--subsample", "0.3"])
    m = tmp_path / "c.vgf"
    assert cli.main(["train", "--csv", str(out / "syn1.csv"), str(out / "syn2.csv"),
                     "--model-out", str(m), "--n-trees", "2"]) == 0
    assert load_model(m).n_trees == 2


def test_train_bad_schema(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    assert cli.main(["train", "--csv", str(bad), "--model-out", str(tmp_path / "m.vgf")]) == 2
    assert "SchemaError" in capsys.readouterr().err


def test_train_unknown_held_out(dataset, tmp_path):
    assert cli.main(["train", "--dataset", str(dataset), "--held-out", "nope",
                     "--model-out", str(tmp_path / "m.vgf")]) == 1


def test_segment(dataset, model_path, tmp_path):
    mask = tmp_path / "mask.png"
    proba = tmp_path / "proba.png"
    assert cli.main(["segment", str(dataset / "syn0.png"), str(model_path), str(mask),
                     "--proba-out", str(proba)]) == 0
    assert load_gray(mask).shape == (40, 40)
    with Image.open(proba) as im:
        assert im.mode.startswith("I")


def test_segment_zero_model(dataset, tmp_path):
    save_model(constant_model(0.0), tmp_path / "zero.vgf")
    assert cli.main(["segment", str(dataset / "syn0.png"), str(tmp_path / "zero.vgf"),
                     str(tmp_path / "m.png")]) == 0
    assert np.all(load_gray(tmp_path / "m.png") == 0)


def test_segment_29_feature_model(dataset, tmp_path, capsys):
    save_model(constant_model(0.5, n_features=29), tmp_path / "m29.vgf")
    code = cli.main(["segment", str(dataset / "syn0.png"), str(tmp_path / "m29.vgf"),
                     str(tmp_path / "m.png")])
    assert code == 2
    assert "DimensionError" in capsys.readouterr().err


def test_segment_corrupt_model(dataset, tmp_path):
    (tmp_path / "junk.vgf").write_bytes(b"VGFOREST\x01\x00\x00\x00garbage")
    assert cli.main(["segment", str(dataset / "syn0.png"), str(tmp_path / "junk.vgf"),
                     str(tmp_path / "m.png")]) == 2


def test_loio(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["loio", str(dataset), str(out), *FAST, "--ablation"]) == 0
    text = capsys.readouterr().out
    assert "pooled" in text and "This work" in text
    for image_id in ("syn0", "syn1", "syn2"):
        assert (out / "masks" / f"{image_id}_mask.png").exists()
        assert (out / "proba" / f"{image_id}_proba.png").exists()
        assert (out / "models" / f"{image_id}.vgf").exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["per_image"]) == {"syn0", "syn1", "syn2"}
    assert any("connectivity ablation" in n for n in metrics["notes"])
    assert (out / "ablation" / "metrics.json").exists()
    assert (out / "roc.csv").read_text().startswith("fpr,tpr,threshold")
    # refuses to overwrite a finished run
    assert cli.main(["loio", str(dataset), str(out), *FAST]) == 1


def test_loio_trivial_entries(tmp_path, capsys):
    d = tmp_path / "flat"
    d.mkdir()
    for k in range(2):
        Image.fromarray(np.full((10, 10), 90, np.uint8)).save(d / f"f{k}.png")
        Image.fromarray(np.zeros((10, 10), np.uint8)).save(d / f"f{k}_gt.png")
    assert cli.main(["loio", str(d), str(tmp_path / "o"), "--n-trees", "2",
                     "--subsample", "1.0"]) == 0
    metrics = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert metrics["aggregate"]["tpr"] is None and metrics["aggregate"]["tnr"] == 1.0


@pytest.mark.parametrize("exc,code", [(KeyboardInterrupt, 3), (RuntimeError, 3)])
def test_loio_interrupted_leaves_nothing(dataset, tmp_path, monkeypatch, exc, code):
    def boom(entries, *args, on_fold=None, **kw):
        raise exc("stop")

    monkeypatch.setattr(cli, "leave_one_image_out", boom)
    out = tmp_path / "run"
    assert cli.main(["loio", str(dataset), str(out), *FAST]) == code
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_dump_plane(dataset, tmp_path):
    out = tmp_path / "kuw.png"
    assert cli.main(["dump-plane", str(dataset / "syn0.png"), "kuw_11", str(out)]) == 0
    assert load_gray(out).shape == (40, 40)


def test_dump_plane_constant(tmp_path):
    Image.fromarray(np.full((8, 8), 40, np.uint8)).save(tmp_path / "c.png")
    assert cli.main(["dump-plane", str(tmp_path / "c.png"), "hess_tr", str(tmp_path / "t.png")]) == 0
    plane = load_gray(tmp_path / "t.png")
    assert np.all(plane == plane[0, 0])


def test_dump_plane_unknown(dataset, tmp_path, capsys):
    code = cli.main(["dump-plane", str(dataset / "syn0.png"), "frangi", str(tmp_path / "x.png")])
    assert code == 1
    err = capsys.readouterr().err
    assert "frangi" in err and "hess_det" in err and "lsobel_d5" in err
