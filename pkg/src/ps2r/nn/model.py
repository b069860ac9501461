"""Point encoder, max-pool aggregation and MLP classifier with hand-written backprop.

Tensors are batched as ``(B, N, 3)`` point sets. Dense layers compute
``x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

POINT_MLP = "point_mlp"
EDGE_CONV = "edge_conv"


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = POINT_MLP
    layer_widths: tuple = (64, 128, 256)
    k: int = 20

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.kind not in (POINT_MLP, EDGE_CONV):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ValueError("layer_widths must be a nonempty list of positive integers")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @property
    def feature_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    hidden_widths: tuple = (128, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")


def layer_shapes(enc: EncoderConfig, cls: ClassifierConfig) -> list[tuple[str, tuple]]:
    shapes = []
    fan_in = 6 if enc.kind == EDGE_CONV else 3
    for i, w in enumerate(enc.layer_widths):
        shapes += [(f"enc.{i}.weight", (fan_in, w)), (f"enc.{i}.bias", (w,))]
        fan_in = w
    widths = cls.hidden_widths + (cls.num_classes,)
    for i, w in enumerate(widths):
        shapes += [(f"cls.{i}.weight", (fan_in, w)), (f"cls.{i}.bias", (w,))]
        fan_in = w
    return shapes


class ModelParams:
    """Named float64 tensors of the encoder and classifier, each with a gradient slot."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.array(v, dtype=np.float64) for k, v in tensors.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def check_shapes(self, enc: EncoderConfig, cls: ClassifierConfig) -> None:
        expected = dict(layer_shapes(enc, cls))
        if set(expected) != set(self.tensors):
            raise ValueError("parameter names do not match the model configuration")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")


def init_params(enc: EncoderConfig, cls: ClassifierConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases; weights drawn in layer order."""
    tensors = {}
    for name, shape in layer_shapes(enc, cls):
        if name.endswith(".weight"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(tensors)


def knn_graph(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points, nearest first, ties to the lower index."""
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    diff = p[:, None, :] - p[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    global_feature: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class ForwardCache:
    x: np.ndarray
    knn: Optional[np.ndarray] = None
    edge_in: Optional[np.ndarray] = None
    edge_pre: Optional[np.ndarray] = None
    edge_arg: Optional[np.ndarray] = None
    enc_in: list = field(default_factory=list)
    enc_pre: list = field(default_factory=list)
    pool_arg: Optional[np.ndarray] = None
    cls_in: list = field(default_factory=list)
    cls_pre: list = field(default_factory=list)


def _dense(x, w, b):
    return x @ w + b


def forward_batch(x: np.ndarray, params: ModelParams, enc: EncoderConfig, cls: ClassifierConfig):
    """Forward a batch ``(B, N, 3)``. Returns ``(logits, probs, global_features, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected (B, N, 3) points, got shape {x.shape}")
    B, N, _ = x.shape
    if N == 0:
        raise ValueError("empty point set")
    cache = ForwardCache(x=x)
    h = x
    first = 0
    if enc.kind == EDGE_CONV:
        if N < enc.k + 1:
            raise ValueError(f"edge_conv needs at least k+1={enc.k + 1} points, got {N}")
        knn = np.stack([knn_graph(c, enc.k) for c in x])  # (B, N, k)
        nbr = x[np.arange(B)[:, None, None], knn]  # (B, N, k, 3)
        xi = np.broadcast_to(x[:, :, None, :], nbr.shape)
        e = np.concatenate([xi, nbr - xi], axis=-1)  # (B, N, k, 6)
        z = _dense(e, params["enc.0.weight"], params["enc.0.bias"])
        a = np.maximum(z, 0.0)
        arg = a.argmax(axis=2)  # (B, N, w0)
        h = np.take_along_axis(a, arg[:, :, None, :], axis=2)[:, :, 0, :]
        cache.knn, cache.edge_in, cache.edge_pre, cache.edge_arg = knn, e, z, arg
        first = 1
    last = len(enc.layer_widths) - 1
    for i in range(first, last):
        cache.enc_in.append(h)
        z = _dense(h, params[f"enc.{i}.weight"], params[f"enc.{i}.bias"])
        cache.enc_pre.append(z)
        h = np.maximum(z, 0.0)
    if last >= first:
        # last layer computed feature-major so the pooling argmax runs over a contiguous axis
        cache.enc_in.append(h)
        zt = np.matmul(params[f"enc.{last}.weight"].T, h.transpose(0, 2, 1))
        zt += params[f"enc.{last}.bias"][:, None]
        arg = zt.argmax(axis=2)  # (B, D), first maximum on ties
        zsel = np.take_along_axis(zt, arg[:, :, None], axis=2)[:, :, 0]
        cache.enc_pre.append(zsel)
        # max over points commutes with the monotone ReLU
        g = np.maximum(zsel, 0.0)
    else:
        arg = h.argmax(axis=1)
        g = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
    cache.pool_arg = arg
    n_cls = len(cls.hidden_widths) + 1
    a = g
    for i in range(n_cls):
        cache.cls_in.append(a)
        z = _dense(a, params[f"cls.{i}.weight"], params[f"cls.{i}.bias"])
        cache.cls_pre.append(z)
        a = np.maximum(z, 0.0) if i < n_cls - 1 else z
    logits = a
    return logits, softmax(logits), g, cache


def backward_batch(cache: ForwardCache, dlogits: np.ndarray, params: ModelParams,
                   enc: EncoderConfig, cls: ClassifierConfig) -> None:
    """Accumulate d(loss)/d(theta) into ``params.grads`` given d(loss)/d(logits).

    Max-pooling sends the gradient to the selected (lowest-index) point and
    ReLU'(0) is taken as 0.
    """
    grads = params.grads
    d = dlogits
    n_cls = len(cls.hidden_widths) + 1
    for i in reversed(range(n_cls)):
        if i < n_cls - 1:
            d = d * (cache.cls_pre[i] > 0)
        grads[f"cls.{i}.weight"] += cache.cls_in[i].T @ d
        grads[f"cls.{i}.bias"] += d.sum(axis=0)
        d = d @ params[f"cls.{i}.weight"].T
    # d is now d/dg, shape (B, D)
    B, N = cache.x.shape[:2]
    first = 1 if enc.kind == EDGE_CONV else 0
    last = len(enc.layer_widths) - 1
    arg = cache.pool_arg
    bidx = np.arange(B)[:, None]
    if last >= first:
        # only the selected point of each (cloud, feature) receives gradient
        dz = d * (cache.enc_pre[-1] > 0)
        h_in = cache.enc_in[-1]
        w = params[f"enc.{last}.weight"]
        grads[f"enc.{last}.weight"] += np.einsum("bdi,bd->id", h_in[bidx, arg], dz)
        grads[f"enc.{last}.bias"] += dz.sum(axis=0)
        dh = None
        if last > 0:
            dh = np.zeros(h_in.shape)
            np.add.at(dh, (bidx, arg), dz[:, :, None] * w.T[None])
    else:
        dh = np.zeros((B, N, d.shape[1]))
        np.put_along_axis(dh, arg[:, None, :], d[:, None, :], axis=1)
    for j in reversed(range(len(cache.enc_in) - (last >= first))):
        i = j + first
        dz = dh * (cache.enc_pre[j] > 0)
        h_in = cache.enc_in[j]
        grads[f"enc.{i}.weight"] += h_in.reshape(-1, h_in.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        grads[f"enc.{i}.bias"] += dz.sum(axis=(0, 1))
        if j > 0 or first:
            dh = dz @ params[f"enc.{i}.weight"].T
    if first:
        z = cache.edge_pre
        da = np.zeros_like(z)
        np.put_along_axis(da, cache.edge_arg[:, :, None, :], dh[:, :, None, :], axis=2)
        dz = da * (z > 0)
        e = cache.edge_in
        grads["enc.0.weight"] += e.reshape(-1, e.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        grads["enc.0.bias"] += dz.sum(axis=(0, 1, 2))


def forward(points: np.ndarray, params: ModelParams, enc: EncoderConfig,
            cls: ClassifierConfig) -> Prediction:
    """Single point set ``(N, 3)`` -> Prediction."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {p.shape}")
    logits, probs, g, _ = forward_batch(p[None], params, enc, cls)
    return Prediction(logits[0], probs[0], g[0])
