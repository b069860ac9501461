"""Command line entry point: ``ps2r <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command accepts ``--config FILE`` (JSON object keyed by option name);
explicit flags override values from the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import metrics
from .augment import AugmentConfig, augment_pipeline
from .dataset import SPLITS, CorpusConfig, DatasetManifest, gen_corpus
from .geometry import (PointCloud, ScanConfig, SimulationError, load_mesh, read_ps2r,
                       render_depth, sample_surface, sample_viewpoint, simulate_views, write_pgm,
                       write_ply, write_ps2r)
from .nn import (EncoderConfig, TrainConfig, TrainingError, load_checkpoint, predict_batch,
                 save_checkpoint)
from .pipeline import Ablation, RunSettings, evaluate, load_clouds, load_meshes, run_training
from .rng import substream, substream_int

log = logging.getLogger("ps2r")


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _names(text):
    if isinstance(text, (list, tuple)):
        return tuple(str(x) for x in text)
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _scan_args(p):
    p.add_argument("--resolution", type=_ints, default=(128, 128), help="W,H in pixels")
    p.add_argument("--focal", type=float, default=128.0, help="focal length in pixels")
    p.add_argument("--elevation", type=_floats, default=(10.0, 80.0), help="min,max degrees")
    p.add_argument("--distance", type=_floats, default=(2.0, 4.0),
                   help="min,max sensor distance in bounding radii")
    p.add_argument("--min-points", type=int, default=30)


def _validated(build):
    """Run a config constructor, turning its ValueError into a usage error."""
    try:
        return build()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _scan_config(a) -> ScanConfig:
    if len(a.resolution) != 2 or len(a.elevation) != 2 or len(a.distance) != 2:
        raise UsageError("--resolution, --elevation and --distance take two values")
    return _validated(lambda: ScanConfig(
        resolution=a.resolution, focal_px=a.focal, elev_min=a.elevation[0],
        elev_max=a.elevation[1], r_min=a.distance[0], r_max=a.distance[1],
        min_points=a.min_points))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ps2r", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write the procedural cross-domain corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=_names, default=CorpusConfig.classes)
    p.add_argument("--source-per-class", type=int, default=100)
    p.add_argument("--class-ratios", type=_floats, default=None)
    p.add_argument("--target-per-class", type=int, default=40)
    p.add_argument("--unlabeled-fraction", type=float, default=0.5)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--scale-range", type=_floats, default=(0.6, 1.4))
    p.add_argument("--target-noise", type=float, default=0.01)
    _scan_args(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("simulate", help="multi-view partial scans of meshes")
    p.add_argument("--config")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("-M", "--views", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--object-id", type=int, default=0, help="object id for --mesh input")
    _scan_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("augment", help="write an augmented preview of a cloud or mesh")
    p.add_argument("--config")
    p.add_argument("--input", required=True, help=".ps2r cloud or .off/.obj mesh")
    p.add_argument("--out", required=True, help=".ps2r or .ply")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--no-rotation", action="store_true")
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a classifier for one ablation setting")
    p.add_argument("--config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", default="ase", help="baseline, a, as or ase (or a+s+e)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-5)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--encoder", choices=("point_mlp", "edge_conv"), default="point_mlp")
    p.add_argument("--widths", type=_ints, default=(64, 128, 256))
    p.add_argument("--hidden", type=_ints, default=(128, 64))
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--points", type=int, default=1024)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("-M", "--views", type=int, default=10)
    p.add_argument("--pool-points", type=int, default=2048)
    _scan_args(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "metrics on a manifest split"),
                                 ("export-features", cmd_export_features,
                                  "CSV of pooled global features")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", default="target_test")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("render-depth", help="debug: render one depth map to PGM")
    p.add_argument("--config")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _scan_args(p)
    p.set_defaults(func=cmd_render_depth)
    return parser


# --------------------------------------------------------------------------
# commands


def cmd_gen_corpus(a) -> int:
    scan = _scan_config(a)
    cfg = _validated(lambda: CorpusConfig(
        classes=a.classes, source_per_class=a.source_per_class, class_ratios=a.class_ratios,
        target_per_class=a.target_per_class, unlabeled_fraction=a.unlabeled_fraction,
        val_fraction=a.val_fraction, scale_range=a.scale_range, target_noise=a.target_noise,
        seed=a.seed, scan=scan))
    man = gen_corpus(cfg, a.out)
    for split in SPLITS:
        log.info("%s: %d items", split, len(man.items(split)))
    print(Path(a.out) / "manifest.json")
    return 0


def cmd_simulate(a) -> int:
    if a.views < 1:
        raise UsageError("-M must be at least 1")
    scan = _scan_config(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.mesh:
        jobs = [(load_mesh(a.mesh), None, a.object_id)]
    else:
        jobs = load_meshes(DatasetManifest.read(a.manifest))
    written = 0
    for mesh, label, oid in jobs:
        clouds = simulate_views(mesh, a.views, scan, substream_int(a.seed, "simulate", oid),
                                object_id=oid, label=label)
        for c in clouds:
            write_ps2r(c, out / f"{oid}_v{c.view_id}.ps2r")
            written += 1
    print(f"wrote {written} clouds to {out}")
    return 0


def _load_any(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() in (".off", ".obj"):
        return sample_surface(load_mesh(path), 2048, 0)
    return PointCloud(read_ps2r(path))


def _write_cloud(cloud: PointCloud, path) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(cloud, path)
    else:
        write_ps2r(cloud, path)


def cmd_augment(a) -> int:
    cfg = _validated(lambda: AugmentConfig(
        rotation_enabled=not a.no_rotation, noise_sigma=a.noise_sigma,
        target_points=a.points, normalize=not a.no_normalize))
    cloud = augment_pipeline(_load_any(a.input), cfg, substream(a.seed, "augment"))
    _write_cloud(cloud, a.out)
    return 0


def settings_from_args(a) -> RunSettings:
    scan = _scan_config(a)
    if a.views < 1:
        raise UsageError("-M must be at least 1")
    if a.points < 1 or a.pool_points < 1 or a.noise_sigma < 0 or not a.hidden:
        raise UsageError("--points, --pool-points and --hidden must be positive, --noise-sigma >= 0")
    return _validated(lambda: RunSettings(
        ablation=Ablation.parse(a.ablation),
        train=TrainConfig(batch_size=a.batch_size, epochs=a.epochs, learning_rate=a.lr,
                          weight_decay=a.weight_decay, lambda_entropy=a.lam, seed=a.seed),
        encoder=EncoderConfig(kind=a.encoder, layer_widths=a.widths, k=a.k),
        target_points=a.points, noise_sigma=a.noise_sigma, hidden_widths=a.hidden,
        views=a.views, scan=scan, pool_points=a.pool_points,
    ))


def cmd_train(a) -> int:
    settings = settings_from_args(a)
    man = DatasetManifest.read(a.manifest)
    for split in ("source_train",):
        if split not in man.splits:
            raise UsageError(f"manifest has no {split!r} split")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = Counter()
    hist_path = out / "history.jsonl"
    with hist_path.open("w") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            log.info("epoch %d  loss %.4f  val_acc %s", rec["epoch"], rec["train_loss"], rec["val_acc"])

        params, history, cls = run_training(man, settings, rng_counts=counts, on_epoch=on_epoch)
    save_checkpoint(out / "checkpoint.ps2w", params, settings.encoder, cls, settings.target_points)
    (out / "rng_counts.json").write_text(json.dumps(dict(sorted(counts.items())), indent=1) + "\n")
    print(out / "checkpoint.ps2w")
    return 0


def _eval_inputs(a):
    params, enc, cls, target_points = load_checkpoint(a.checkpoint)
    man = DatasetManifest.read(a.manifest)
    if a.split not in man.splits:
        raise UsageError(f"unknown split {a.split!r}; available: {sorted(man.splits)}")
    if cls.num_classes != man.num_classes:
        raise UsageError(f"checkpoint has {cls.num_classes} classes, manifest has {man.num_classes}")
    return params, enc, cls, target_points, man, load_clouds(man, a.split)


def cmd_eval(a) -> int:
    params, enc, cls, target_points, man, clouds = _eval_inputs(a)
    if any(c.label is None for c in clouds):
        raise UsageError(f"split {a.split!r} is unlabeled")
    if not clouds:
        raise UsageError(f"split {a.split!r} is empty")
    res = evaluate(clouds, params, enc, cls, target_points, a.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    report = res.metrics_dict()
    (out / "metrics.json").write_text(json.dumps(report, indent=1) + "\n")
    (out / "confusion.csv").write_text(metrics.confusion_to_csv(res.confusion, man.classes))
    with (out / "class_accuracy.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "support", "accuracy"])
        for name, n, acc in zip(man.classes, res.confusion.sum(axis=1),
                                metrics.class_accuracy(res.confusion)):
            w.writerow([name, int(n), "" if np.isnan(acc) else repr(float(acc))])
    print(json.dumps(report))
    return 0


def cmd_export_features(a) -> int:
    params, enc, cls, target_points, man, clouds = _eval_inputs(a)
    preds = predict_batch(clouds, params, enc, cls, target_points, a.seed)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object_id", "label"] + [f"f{i}" for i in range(enc.feature_dim)])
        for c, p in zip(clouds, preds):
            w.writerow([c.object_id, -1 if c.label is None else c.label]
                       + [repr(float(x)) for x in p.global_feature])
    print(out)
    return 0


def cmd_render_depth(a) -> int:
    mesh = load_mesh(a.mesh)
    scan = _scan_config(a)
    view = sample_viewpoint(mesh.bounding_radius(), substream(a.seed, "simulate"), scan)
    write_pgm(render_depth(mesh, view), a.out)
    return 0


# --------------------------------------------------------------------------


def _apply_config_file(parser, argv):
    """Load ``--config`` JSON into the chosen subparser's defaults."""
    # pre-scan without the full parser, whose required options may come from the file
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    ns, rest = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((t for t in rest if t in choices), None)
    if not ns.config or command is None:
        return
    path = ns.config
    sub = choices[command]
    known = {act.dest: act for act in sub._actions if act.dest not in ("help", "config")}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    values = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        conv = known[dest].type
        values[dest] = conv(value) if conv is not None and value is not None else value
    # required options satisfied by the file become optional
    for dest in values:
        known[dest].required = False
    sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ps2r: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ps2r: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, SimulationError, TrainingError) as exc:
        print(f"ps2r: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
