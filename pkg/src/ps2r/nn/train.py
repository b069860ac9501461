"""Mini-batch training loop and inference helpers."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..augment import AugmentConfig, augment_pipeline
from ..geometry import PointCloud
from ..rng import CountingGenerator, substream
from .losses import objective
from .model import (ClassifierConfig, EncoderConfig, ModelParams, Prediction,
                    backward_batch, forward_batch, init_params)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 80
    learning_rate: float = 1e-3
    weight_decay: float = 5e-5
    lambda_entropy: float = 0.1
    use_entropy: bool = True
    augment: bool = True
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ValueError("learning rate and eps must be positive")
        if self.weight_decay < 0 or self.lambda_entropy < 0:
            raise ValueError("weight_decay and lambda_entropy must be non-negative")

    @property
    def entropy_weight(self) -> float:
        return self.lambda_entropy if self.use_entropy else 0.0


SourceItem = Union[PointCloud, Sequence[PointCloud]]


def _as_views(item: SourceItem) -> list[PointCloud]:
    return [item] if isinstance(item, PointCloud) else list(item)


def prepare_inputs(clouds: Sequence[PointCloud], target_points: int, seed: int) -> np.ndarray:
    """Normalize and resample each cloud (no rotation/noise) -> ``(B, n, 3)``."""
    cfg = AugmentConfig.plain(target_points)
    return np.stack([
        augment_pipeline(c, cfg, substream(seed, "eval", c.object_id, c.view_id)).points
        for c in clouds
    ])


def predict_batch(clouds: Sequence[PointCloud], params: ModelParams, enc: EncoderConfig,
                  cls: ClassifierConfig, target_points: int = 1024, seed: int = 0,
                  chunk: int = 64) -> list[Prediction]:
    out = []
    for i in range(0, len(clouds), chunk):
        x = prepare_inputs(clouds[i:i + chunk], target_points, seed)
        logits, probs, g, _ = forward_batch(x, params, enc, cls)
        out += [Prediction(logits[j], probs[j], g[j]) for j in range(len(x))]
    return out


def predict(cloud: PointCloud, params: ModelParams, enc: EncoderConfig, cls: ClassifierConfig,
            target_points: int = 1024, seed: int = 0) -> Prediction:
    """Class posterior for one cloud; ``Prediction.label`` is the decision."""
    if cloud.count == 0:
        raise ValueError("cannot classify an empty point cloud")
    return predict_batch([cloud], params, enc, cls, target_points, seed)[0]


def _accuracy(params, enc, cls, x_val, y_val, chunk=64):
    correct = 0
    for i in range(0, len(x_val), chunk):
        _, probs, _, _ = forward_batch(x_val[i:i + chunk], params, enc, cls)
        correct += int((probs.argmax(axis=1) == y_val[i:i + chunk]).sum())
    return correct / len(x_val)


def train(source: Sequence[SourceItem], target: Sequence[PointCloud], val: Sequence[PointCloud],
          cfg: TrainConfig, enc: EncoderConfig, cls: ClassifierConfig,
          aug: AugmentConfig = AugmentConfig(), class_weights=None,
          rng_counts: Optional[Counter] = None,
          on_epoch: Optional[Callable[[dict], None]] = None):
    """Train encoder and classifier; returns ``(params, history)``.

    Each source item is a cloud or a list of alternative views of one object;
    every epoch visits each object once, using one of its views. Unlabeled
    target batches of equal size are drawn cyclically when the entropy term is
    active. The returned parameters are those of the epoch with the best
    validation accuracy (earliest on ties), or of the last epoch if ``val`` is
    empty.
    """
    items = [_as_views(s) for s in source]
    if not items:
        raise ValueError("source data is empty")
    labels = np.array([v[0].label for v in items])
    if any(lbl is None for lbl in labels) or labels.max() >= cls.num_classes:
        raise ValueError("every source item needs a label below num_classes")
    labels = labels.astype(np.int64)
    weights = np.ones(cls.num_classes) if class_weights is None else np.asarray(class_weights, float)
    counter = rng_counts if rng_counts is not None else Counter()
    src_aug = aug if cfg.augment else AugmentConfig.plain(aug.target_points)
    tgt_aug = AugmentConfig.plain(aug.target_points)
    lam = cfg.entropy_weight
    use_target = lam > 0 and len(target) > 0

    params = init_params(enc, cls, substream(cfg.seed, "init"))
    state = AdamState.zeros_like(params)
    history: list[dict] = []
    best = params.copy()
    best_acc = -1.0
    if val:
        x_val = prepare_inputs(val, aug.target_points, cfg.seed)
        y_val = np.array([c.label for c in val])

    step = 0
    cycle, cursor, order_t = 0, 0, None
    for epoch in range(1, cfg.epochs + 1):
        srng = substream(cfg.seed, "shuffle", epoch)
        order = srng.permutation(len(items))
        pick = [int(srng.integers(len(items[i]))) if len(items[i]) > 1 else 0 for i in order]
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            clouds = [items[i][pick[b0 + j]] for j, i in enumerate(batch)]
            xs = [augment_pipeline(c, src_aug, CountingGenerator(
                substream(cfg.seed, "augment", c.object_id, c.view_id, epoch), counter)).points
                for c in clouds]
            n_src = len(xs)
            if use_target:
                for _ in range(n_src):
                    if order_t is None or cursor == len(target):
                        order_t = substream(cfg.seed, "target", cycle).permutation(len(target))
                        cycle += 1
                        cursor = 0
                    c = target[order_t[cursor]]
                    cursor += 1
                    xs.append(augment_pipeline(c, tgt_aug, CountingGenerator(
                        substream(cfg.seed, "target", c.object_id, c.view_id, cycle), counter)).points)
            x = np.stack(xs)
            logits, probs, _, cache = forward_batch(x, params, enc, cls)
            loss, d_src, d_tgt = objective(probs[:n_src], labels[batch], weights,
                                           probs[n_src:] if use_target else None, lam)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}")
            dlogits = d_src if d_tgt is None else np.concatenate([d_src, d_tgt])
            params.zero_grad()
            backward_batch(cache, dlogits, params, enc, cls)
            step += 1
            try:
                adam_step(params, state, step, cfg.learning_rate, cfg.beta1, cfg.beta2,
                          cfg.eps, cfg.weight_decay)
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b0 // cfg.batch_size}: {exc}") from exc
            losses.append(loss)
        val_acc = _accuracy(params, enc, cls, x_val, y_val) if val else None
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": val_acc}
        history.append(rec)
        log.debug("epoch %d loss %.5f val_acc %s", epoch, rec["train_loss"], val_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if not val or val_acc > best_acc:
            best_acc = val_acc if val else best_acc
            best = params.copy()
    if cfg.epochs == 0:
        best = params
    return best, history
