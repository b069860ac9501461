"""Ablation-aware glue between the dataset, simulation, training and evaluation."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .augment import AugmentConfig, resample
from .dataset import DatasetManifest, class_weights, load_split
from .geometry import Mesh, PointCloud, ScanConfig, sample_surface, simulate_views
from .nn import ClassifierConfig, EncoderConfig, TrainConfig, predict_batch, train
from .rng import substream, substream_int

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ablation:
    augment: bool = False
    multiview: bool = False
    entropy: bool = False

    @classmethod
    def parse(cls, text: str) -> "Ablation":
        """``baseline``, or any combination of the letters a, s, e (``a+s+e``, ``ase``)."""
        t = text.lower().replace("+", "").replace("-", "").strip()
        if t in ("baseline", "base", "none", ""):
            return cls()
        if not set(t) <= set("ase") or len(set(t)) != len(t):
            raise ValueError(f"unknown ablation {text!r}")
        return cls("a" in t, "s" in t, "e" in t)

    @property
    def name(self) -> str:
        letters = [c for c, on in zip("ASE", (self.augment, self.multiview, self.entropy)) if on]
        return "+".join(letters) if letters else "baseline"


def load_meshes(manifest: DatasetManifest, split: str = "source_train"):
    out = []
    for it, (mesh, label) in zip(manifest.items(split), load_split(manifest, split)):
        if not isinstance(mesh, Mesh):
            raise ValueError(f"{it.path}: source split must contain meshes")
        out.append((mesh, label, it.object_id))
    return out


def load_clouds(manifest: DatasetManifest, split: str) -> list[PointCloud]:
    clouds = []
    for it, (obj, label) in zip(manifest.items(split), load_split(manifest, split)):
        if isinstance(obj, Mesh):
            obj = sample_surface(obj, 2048, substream_int(0, "eval", it.object_id),
                                 label=label, object_id=it.object_id)
        clouds.append(obj)
    return clouds


def _pool(cloud: PointCloud, pool_points: int, seed: int) -> PointCloud:
    if cloud.count <= pool_points:
        return cloud
    return resample(cloud, pool_points, substream(seed, "simulate", cloud.object_id, cloud.view_id, 1))


def build_source(meshes, multiview: bool, seed: int, views: int = 10,
                 scan: ScanConfig = ScanConfig(), pool_points: int = 2048) -> list[list[PointCloud]]:
    """Per source object: ``views`` simulated partial scans, or one full-surface sample.

    Scans larger than ``pool_points`` are reduced to a uniform subset of that
    size to bound memory; training resamples from it every epoch anyway.
    """
    items = []
    for mesh, label, oid in meshes:
        if multiview:
            clouds = simulate_views(mesh, views, scan, substream_int(seed, "simulate", oid),
                                    object_id=oid, label=label)
            items.append([_pool(c, pool_points, seed) for c in clouds])
        else:
            items.append([sample_surface(mesh, pool_points, substream_int(seed, "simulate", oid),
                                         label=label, object_id=oid)])
    return items


@dataclass
class RunSettings:
    ablation: Ablation
    train: TrainConfig
    encoder: EncoderConfig
    target_points: int = 1024
    noise_sigma: float = 0.01
    hidden_widths: tuple = (128, 64)
    views: int = 10
    scan: ScanConfig = ScanConfig()
    pool_points: int = 2048


def run_training(manifest: DatasetManifest, settings: RunSettings,
                 source: Optional[list] = None, rng_counts: Optional[Counter] = None,
                 on_epoch=None):
    """Train one ablation. Returns ``(params, history, classifier_config)``.

    ``source`` may carry pre-built source items (see ``build_source``) so that
    several ablations can share one simulation.
    """
    ab = settings.ablation
    cfg = settings.train
    if source is None:
        source = build_source(load_meshes(manifest), ab.multiview, cfg.seed, settings.views,
                              settings.scan, settings.pool_points)
    target = load_clouds(manifest, "target_train_unlabeled") if ab.entropy else []
    val = load_clouds(manifest, "target_val") if "target_val" in manifest.splits else []
    cls = ClassifierConfig(manifest.num_classes, settings.hidden_widths)
    weights = class_weights(manifest.counts("source_train"))
    aug = AugmentConfig(rotation_enabled=True, noise_sigma=settings.noise_sigma,
                        target_points=settings.target_points)
    tcfg = TrainConfig(**{**cfg.__dict__, "augment": ab.augment,
                          "use_entropy": ab.entropy and cfg.use_entropy})
    params, history = train(source, target, val, tcfg, settings.encoder, cls, aug,
                            class_weights=weights, rng_counts=rng_counts, on_epoch=on_epoch)
    return params, history, cls


@dataclass
class EvalResult:
    confusion: np.ndarray
    accuracy: float
    weighted_f1: float
    mcc: float
    mean_entropy: float
    predictions: list

    def metrics_dict(self) -> dict:
        return {"accuracy": self.accuracy, "weighted_f1": self.weighted_f1, "mcc": self.mcc}


def evaluate(clouds: Sequence[PointCloud], params, enc: EncoderConfig, cls: ClassifierConfig,
             target_points: int, seed: int = 0) -> EvalResult:
    preds = predict_batch(clouds, params, enc, cls, target_points, seed)
    cm = metrics.accumulate(((c.label, p.label) for c, p in zip(clouds, preds)), cls.num_classes)
    ent = [float(-(p.probs * np.log(np.maximum(p.probs, 1e-300))).sum()) for p in preds]
    return EvalResult(cm, metrics.accuracy(cm), metrics.weighted_f1(cm), metrics.mcc(cm),
                      float(np.mean(ent)), preds)
