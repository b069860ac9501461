import csv
import json

import numpy as np
import pytest

from ps2r import metrics
from ps2r.cli import main
from ps2r.dataset import DatasetManifest, ManifestItem, make_box, make_primitive
from ps2r.geometry import PointCloud, read_ps2r, save_mesh, write_ps2r
from ps2r.nn import (ClassifierConfig, EncoderConfig, ModelParams, load_checkpoint, predict_batch,
                     save_checkpoint)
from ps2r.pipeline import load_clouds

SCAN = ["--resolution", "48,48", "--focal", "48", "--min-points", "20"]
TINY = ["--epochs", "2", "--points", "64", "--widths", "8,16", "--hidden", "8", "-M", "2",
        "--batch-size", "4", "--pool-points", "256"] + SCAN


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["gen-corpus", "--out", str(out), "--classes", "box,cone", "--source-per-class", "3",
               "--target-per-class", "4", "--val-fraction", "0.5", "--seed", "3"] + SCAN)
    assert rc == 0
    return out


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def train(corpus, out, *extra):
    return main(["train", "--manifest", str(corpus / "manifest.json"), "--out", str(out)]
                + TINY + list(extra))


def test_gen_corpus_defaults_and_errors(corpus, tmp_path):
    man = DatasetManifest.read(corpus)
    assert man.counts("source_train").tolist() == [3, 3]
    assert main(["gen-corpus", "--out", str(tmp_path), "--classes", "box"]) == 2
    assert main(["gen-corpus", "--out", str(tmp_path), "--source-per-class", "0"]) == 2
    assert main(["gen-corpus"]) == 2


def test_gen_corpus_deterministic(corpus, tmp_path):
    main(["gen-corpus", "--out", str(tmp_path), "--classes", "box,cone", "--source-per-class", "3",
          "--target-per-class", "4", "--val-fraction", "0.5", "--seed", "3"] + SCAN)
    assert tree_bytes(tmp_path) == tree_bytes(corpus)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "a"), "classes": ["box", "torus"],
                               "source_per_class": 2, "target_per_class": 2,
                               "resolution": [48, 48], "focal": 48, "min_points": 20}))
    assert main(["gen-corpus", "--config", str(cfg), "--source-per-class", "1"]) == 0
    man = DatasetManifest.read(tmp_path / "a")
    assert man.classes == ["box", "torus"] and man.counts("source_train").tolist() == [1, 1]
    cfg.write_text(json.dumps({"out": str(tmp_path / "b"), "colour": "red"}))
    assert main(["gen-corpus", "--config", str(cfg)]) == 2


def test_simulate(tmp_path):
    mesh = tmp_path / "cube.off"
    save_mesh(make_box(), mesh)
    out = tmp_path / "views"
    assert main(["simulate", "--mesh", str(mesh), "-M", "10", "--out", str(out), "--object-id", "4"]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == sorted(f"4_v{j}.ps2r" for j in range(10))
    assert main(["simulate", "--mesh", str(tmp_path / "missing.off"), "--out", str(out)]) == 1
    assert main(["simulate", "--mesh", str(mesh), "-M", "0", "--out", str(out)]) == 2


def test_simulate_failure_names_mesh(tmp_path, capsys):
    mesh = tmp_path / "speck.off"
    save_mesh(make_box((1e-3, 1e-3, 1e-3)), mesh)
    rc = main(["simulate", "--mesh", str(mesh), "--out", str(tmp_path / "o"),
               "--resolution", "4,4", "--focal", "4", "--min-points", "30"])
    assert rc == 1
    assert "speck" in capsys.readouterr().err


def test_augment_preview(tmp_path):
    mesh = tmp_path / "torus.obj"
    save_mesh(make_primitive("torus"), mesh)
    assert main(["augment", "--input", str(mesh), "--out", str(tmp_path / "a.ps2r"),
                 "--points", "100", "--seed", "2"]) == 0
    assert read_ps2r(tmp_path / "a.ps2r").shape == (100, 3)
    assert main(["augment", "--input", str(tmp_path / "a.ps2r"), "--out", str(tmp_path / "b.ply"),
                 "--points", "50", "--noise-sigma", "0"]) == 0
    assert (tmp_path / "b.ply").read_text().startswith("ply\n")
    assert main(["augment", "--input", str(mesh), "--out", str(tmp_path / "c.ps2r"),
                 "--noise-sigma", "-1"]) == 2


def test_render_depth(tmp_path):
    mesh = tmp_path / "box.off"
    save_mesh(make_box(), mesh)
    assert main(["render-depth", "--mesh", str(mesh), "--out", str(tmp_path / "d.pgm")] + SCAN) == 0
    assert (tmp_path / "d.pgm").read_bytes().startswith(b"P5\n48 48\n")


def test_train_outputs_and_determinism(corpus, tmp_path):
    a, b, base = tmp_path / "a", tmp_path / "b", tmp_path / "base"
    assert train(corpus, a, "--ablation", "ase", "--seed", "1") == 0
    assert train(corpus, b, "--ablation", "ase", "--seed", "1") == 0
    assert train(corpus, base, "--ablation", "baseline", "--seed", "1") == 0
    assert tree_bytes(a) == tree_bytes(b)
    assert (a / "checkpoint.ps2w").read_bytes() != (base / "checkpoint.ps2w").read_bytes()
    for run in (a, base):
        hist = [json.loads(line) for line in (run / "history.jsonl").read_text().splitlines()]
        assert [h["epoch"] for h in hist] == [1, 2]
        assert set(hist[0]) == {"epoch", "train_loss", "val_acc"}


def test_train_lambda_zero_matches_entropy_off(corpus, tmp_path):
    assert train(corpus, tmp_path / "l0", "--ablation", "ase", "--lambda", "0") == 0
    assert train(corpus, tmp_path / "as", "--ablation", "as") == 0
    assert tree_bytes(tmp_path / "l0") == tree_bytes(tmp_path / "as")


def test_train_all_off_touches_no_rotation_or_noise(corpus, tmp_path):
    assert train(corpus, tmp_path / "b", "--ablation", "baseline") == 0
    counts = json.loads((tmp_path / "b" / "rng_counts.json").read_text())
    assert counts.get("uniform", 0) == 0 and counts.get("normal", 0) == 0
    assert train(corpus, tmp_path / "a", "--ablation", "a") == 0
    counts = json.loads((tmp_path / "a" / "rng_counts.json").read_text())
    assert counts["uniform"] > 0 and counts["normal"] > 0


def test_train_zero_epochs_and_usage_errors(corpus, tmp_path):
    assert main(["train", "--manifest", str(corpus), "--out", str(tmp_path / "z"),
                 "--epochs", "0", "--widths", "8", "--hidden", "4"]) == 0
    assert (tmp_path / "z" / "history.jsonl").read_text() == ""
    _, enc, cls, n = load_checkpoint(tmp_path / "z" / "checkpoint.ps2w")
    assert enc.layer_widths == (8,) and cls.hidden_widths == (4,) and n == 1024
    assert train(corpus, tmp_path / "x", "--ablation", "xyz") == 2
    assert train(corpus, tmp_path / "x", "--lambda", "-1") == 2
    assert main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def oracle_fixture(root):
    """Flat clouds are class 0, solid ones class 1; a hand-set model separates them exactly."""
    rng = np.random.default_rng(0)
    items = []
    for i in range(10):
        p = rng.normal(size=(200, 3))
        label = i % 2
        if label == 0:
            p[:, 2] = 0.0
        write_ps2r(PointCloud(p), root / f"{i}.ps2r")
        items.append(ManifestItem(f"{i}.ps2r", label, i))
    man = DatasetManifest(["flat", "solid"], {"source_train": items}, root=root)
    man.write(root / "manifest.json")
    enc = EncoderConfig(layer_widths=(3,))
    cls = ClassifierConfig(2, (1,))
    # global feature = relu(max x, max y, max z); hidden unit = max z, which is 0 only for flat clouds
    params = ModelParams({
        "enc.0.weight": np.eye(3), "enc.0.bias": np.zeros(3),
        "cls.0.weight": np.array([[0.0], [0.0], [1.0]]), "cls.0.bias": np.zeros(1),
        "cls.1.weight": np.array([[-100.0, 100.0]]), "cls.1.bias": np.array([1.0, -1.0]),
    })
    save_checkpoint(root / "oracle.ps2w", params, enc, cls, 128)
    return man


def test_eval_perfect_oracle(tmp_path, capsys):
    oracle_fixture(tmp_path)
    rc = main(["eval", "--checkpoint", str(tmp_path / "oracle.ps2w"), "--manifest",
               str(tmp_path), "--split", "source_train", "--out", str(tmp_path / "ev")])
    assert rc == 0
    report = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert report == {"accuracy": 1.0, "weighted_f1": 1.0, "mcc": 1.0}
    assert json.loads(capsys.readouterr().out) == report


def test_eval_metrics_match_confusion_csv(corpus, tmp_path):
    assert train(corpus, tmp_path / "m", "--ablation", "as") == 0
    rc = main(["eval", "--checkpoint", str(tmp_path / "m" / "checkpoint.ps2w"), "--manifest",
               str(corpus), "--out", str(tmp_path / "ev")])
    assert rc == 0
    report = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    names, cm = metrics.confusion_from_csv((tmp_path / "ev" / "confusion.csv").read_text())
    assert names == ["box", "cone"]
    assert report == {"accuracy": metrics.accuracy(cm), "weighted_f1": metrics.weighted_f1(cm),
                      "mcc": metrics.mcc(cm)}
    rows = list(csv.reader((tmp_path / "ev" / "class_accuracy.csv").open()))
    assert rows[0] == ["class", "support", "accuracy"] and len(rows) == 3


def test_eval_usage_errors(corpus, tmp_path):
    oracle_fixture(tmp_path)
    ck = str(tmp_path / "oracle.ps2w")
    assert main(["eval", "--checkpoint", ck, "--manifest", str(tmp_path), "--split", "nope",
                 "--out", str(tmp_path / "e")]) == 2
    three = DatasetManifest(["a", "b", "c"], {"target_test": []}, root=tmp_path / "three")
    (tmp_path / "three").mkdir()
    three.write(tmp_path / "three" / "manifest.json")
    assert main(["eval", "--checkpoint", ck, "--manifest", str(tmp_path / "three"),
                 "--out", str(tmp_path / "e")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ps2w"), "--manifest",
                 str(tmp_path), "--out", str(tmp_path / "e")]) == 1


def test_export_features(corpus, tmp_path):
    assert train(corpus, tmp_path / "m", "--ablation", "a") == 0
    ck = tmp_path / "m" / "checkpoint.ps2w"
    args = ["export-features", "--checkpoint", str(ck), "--manifest", str(corpus),
            "--split", "target_train_unlabeled"]
    assert main(args + ["--out", str(tmp_path / "f1.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "f2.csv")]) == 0
    assert (tmp_path / "f1.csv").read_bytes() == (tmp_path / "f2.csv").read_bytes()
    rows = list(csv.reader((tmp_path / "f1.csv").open()))
    assert rows[0][:3] == ["object_id", "label", "f0"]
    assert len(rows) == 1 + 4 and all(len(r) == 16 + 2 for r in rows)
    assert all(r[1] == "-1" for r in rows[1:])
    params, enc, cls, n = load_checkpoint(ck)
    clouds = load_clouds(DatasetManifest.read(corpus), "target_train_unlabeled")
    preds = predict_batch(clouds, params, enc, cls, n, 0)
    feats = np.array([[float(x) for x in r[2:]] for r in rows[1:]])
    np.testing.assert_allclose(feats, [p.global_feature for p in preds], rtol=0, atol=1e-12)
