import numpy as np
import pytest

from ps2r.nn import (EDGE_CONV, POINT_MLP, ClassifierConfig, EncoderConfig, backward_batch,
                     forward_batch, init_params, objective)


def toy_model(kind, seed, n_points=16, num_classes=2, widths=(8, 12), hidden=(6,), k=4):
    enc = EncoderConfig(kind=kind, layer_widths=widths, k=k)
    cls = ClassifierConfig(num_classes, hidden)
    rng = np.random.default_rng(seed)
    params = init_params(enc, cls, rng)
    # nonzero biases so every bias gradient path is exercised
    for name in params.names():
        if name.endswith("bias"):
            params.tensors[name][:] = rng.normal(0, 0.1, params[name].shape)
    return enc, cls, params


def batch_loss(params, enc, cls, x, labels, weights, n_src, lam):
    _, probs, _, cache = forward_batch(x, params, enc, cls)
    loss, d_src, d_tgt = objective(probs[:n_src], labels, weights,
                                   probs[n_src:] if len(x) > n_src else None, lam)
    return loss, d_src, d_tgt, cache


def analytic_grads(params, enc, cls, x, labels, weights, n_src, lam):
    loss, d_src, d_tgt, cache = batch_loss(params, enc, cls, x, labels, weights, n_src, lam)
    dl = d_src if d_tgt is None else np.concatenate([d_src, d_tgt])
    params.zero_grad()
    backward_batch(cache, dl, params, enc, cls)
    return {k: v.copy() for k, v in params.grads.items()}


def activation_pattern(cache):
    """Every discrete choice of the forward pass: pooling winners and ReLU masks."""
    parts = [cache.pool_arg.ravel()]
    if cache.edge_arg is not None:
        parts += [cache.edge_arg.ravel(), (cache.edge_pre > 0).ravel()]
    parts += [(z > 0).ravel() for z in cache.enc_pre + cache.cls_pre[:-1]]
    return np.concatenate([p.astype(np.int64) for p in parts])


def numeric_grads(params, enc, cls, x, labels, weights, n_src, lam, step=1e-5):
    """Central differences. Also reports whether any perturbation crossed a kink."""
    base = activation_pattern(batch_loss(params, enc, cls, x, labels, weights, n_src, lam)[3])
    out = {}
    crossed = False
    for name, theta in params.tensors.items():
        g = np.zeros_like(theta)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _, _, cp = batch_loss(params, enc, cls, x, labels, weights, n_src, lam)
            flat[i] = old - step
            lm, _, _, cm = batch_loss(params, enc, cls, x, labels, weights, n_src, lam)
            flat[i] = old
            crossed |= not (np.array_equal(activation_pattern(cp), base)
                            and np.array_equal(activation_pattern(cm), base))
            g.reshape(-1)[i] = (lp - lm) / (2 * step)
        out[name] = g
    return out, crossed


def max_relative_error(a, n, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximised over the tensor."""
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def gradient_check_case(kind, seed):
    """Per-tensor max relative error, or None if finite differences crossed a kink."""
    enc, cls, params = toy_model(kind, seed)
    rng = np.random.default_rng(1000 + seed)
    x = rng.normal(size=(4, 16, 3))  # 2 labeled source clouds + 2 unlabeled target clouds
    labels = np.array([0, 1])
    weights = np.array([0.7, 1.6])
    ana = analytic_grads(params, enc, cls, x, labels, weights, 2, 0.3)
    num, crossed = numeric_grads(params, enc, cls, x, labels, weights, 2, 0.3)
    if crossed:
        return None
    return {k: max_relative_error(ana[k], num[k]) for k in ana}


@pytest.fixture(params=[POINT_MLP, EDGE_CONV])
def encoder_kind(request):
    return request.param
