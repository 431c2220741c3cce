"""Dense tensor engine for chain-with-residual networks.

Forward inference, reverse-mode gradients for every trainable tensor, BN
statistics recalibration and top-1 evaluation, all on plain numpy arrays
(activations ``batch x channel x height x width``, conv kernels
``out x in x kH x kW``). Convolutions run through an im2col lowering; ops
preserve the dtype of their inputs, so float64 inputs give float64
results (used by the gradient-check harness).
"""

from __future__ import annotations

import numpy as np

from .errors import EngineError
from .model_ir import ModelSnapshot, layer_tensor_roles, tensor_name

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

TRAINABLE_ROLES = {"w", "b", "gamma", "beta"}


def trainable_names(s: ModelSnapshot):
    """Names of all trainable tensors (conv/fc weights+biases, BN gamma/beta)."""
    out = []
    for lid in s.chain():
        for role in layer_tensor_roles(s.layers[lid]):
            if role in TRAINABLE_ROLES:
                out.append(tensor_name(lid, role))
    return out


# ---------------------------------------------------------------------------
# im2col lowering
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, sh, sw, ph, pw, pad_value=0.0):
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise EngineError(f"window {kh}x{kw} stride {sh}x{sw} collapses {h}x{w} input")
    if ph or pw:
        xp = np.full((n, c, h + 2 * ph, w + 2 * pw), pad_value, dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x
    else:
        xp = x
    patches = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patches[:, :, i, j] = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return patches, ho, wo


def _col2im(dpatches, x_shape, sh, sw, ph, pw):
    n, c, h, w = x_shape
    kh, kw = dpatches.shape[2], dpatches.shape[3]
    ho, wo = dpatches.shape[4], dpatches.shape[5]
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dpatches.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dpatches[:, :, i, j]
    if ph or pw:
        return dxp[:, :, ph:ph + h, pw:pw + w]
    return dxp


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def forward(s: ModelSnapshot, batch, mode="eval", params=None, checked=False):
    """Run the network; returns (logits, cache).

    In train mode BN uses batch statistics and the cache carries EMA
    updates for the running stats under ``cache["bn_updates"]`` (the
    caller owns committing them; the snapshot is never mutated). Eval
    mode uses stored running statistics.
    """
    if mode not in ("train", "eval"):
        raise EngineError(f"unknown mode {mode!r}")
    params = s.weights if params is None else params
    x = np.asarray(batch)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(s.input_shape):
        raise EngineError(f"batch shape {tuple(x.shape)} incompatible with input {s.input_shape}")

    records = {}
    bn_updates = {}
    stash = {}
    for b in s.blocks:
        if b.kind in ("residual", "inverted_residual"):
            stash[b.id] = x
        for lid in b.layer_ids:
            lyr = s.layers[lid]
            kind = lyr.kind
            try:
                if kind == "conv":
                    w = params[tensor_name(lid, "w")]
                    patches, ho, wo = _im2col(x, w.shape[2], w.shape[3], *lyr.stride, *lyr.padding)
                    out = np.tensordot(patches, w, axes=([1, 2, 3], [1, 2, 3]))
                    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
                    if lyr.has_bias:
                        out += params[tensor_name(lid, "b")][None, :, None, None]
                    records[lid] = (x.shape, patches)
                    x = out
                elif kind == "depthwise_conv":
                    w = params[tensor_name(lid, "w")]
                    patches, ho, wo = _im2col(x, w.shape[2], w.shape[3], *lyr.stride, *lyr.padding)
                    out = np.einsum("bcijhw,cij->bchw", patches, w[:, 0])
                    if lyr.has_bias:
                        out += params[tensor_name(lid, "b")][None, :, None, None]
                    records[lid] = (x.shape, patches)
                    x = out
                elif kind == "batch_norm":
                    x, saved = _bn_forward(lid, lyr, x, params, mode, bn_updates)
                    records[lid] = saved
                elif kind == "relu":
                    mask = x > 0
                    records[lid] = mask
                    x = x * mask
                elif kind == "relu6":
                    mask = (x > 0) & (x < 6)
                    records[lid] = mask
                    x = np.clip(x, 0, 6)
                elif kind == "max_pool":
                    patches, ho, wo = _im2col(x, *lyr.kernel, *lyr.stride, *lyr.padding, pad_value=-np.inf)
                    flat = patches.reshape(x.shape[0], x.shape[1], -1, ho, wo)
                    idx = flat.argmax(axis=2)
                    records[lid] = (x.shape, lyr, idx, flat.shape)
                    x = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
                elif kind == "avg_pool":
                    patches, ho, wo = _im2col(x, *lyr.kernel, *lyr.stride, *lyr.padding)
                    records[lid] = (x.shape, lyr)
                    x = patches.mean(axis=(2, 3))
                elif kind == "global_avg_pool":
                    records[lid] = x.shape
                    x = x.mean(axis=(2, 3), keepdims=True)
                elif kind == "flatten":
                    records[lid] = x.shape
                    x = x.reshape(x.shape[0], -1)
                elif kind == "fully_connected":
                    w = params[tensor_name(lid, "w")]
                    if x.shape[1] != w.shape[1]:
                        raise EngineError(f"feature count {x.shape[1]} != weight input {w.shape[1]}")
                    records[lid] = x
                    x = x @ w.T
                    if lyr.has_bias:
                        x = x + params[tensor_name(lid, "b")]
                elif kind == "add_residual":
                    side = stash.get(b.id)
                    if side is None or side.shape != x.shape:
                        raise EngineError(
                            f"residual shapes differ: {None if side is None else side.shape} vs {x.shape}")
                    records[lid] = b.id
                    x = x + side
                else:
                    raise EngineError(f"unsupported kind {kind!r}")
            except EngineError as e:
                raise EngineError(f"layer {lid}: {e}") from None
            if checked and not np.isfinite(x).all():
                raise EngineError(f"layer {lid}: non-finite activation")
    if x.ndim != 2 or x.shape[1] != s.num_classes:
        raise EngineError(f"network output shape {tuple(x.shape)} is not (batch, {s.num_classes})")
    cache = {"snapshot": s, "params": params, "mode": mode,
             "records": records, "bn_updates": bn_updates, "consumed": False}
    return x, cache


def _bn_forward(lid, lyr, x, params, mode, bn_updates):
    if x.ndim != 4:
        raise EngineError("batch_norm expects a 4-d activation")
    gamma = params[tensor_name(lid, "gamma")]
    beta = params[tensor_name(lid, "beta")]
    if mode == "train":
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        rm = params[tensor_name(lid, "mean")]
        rv = params[tensor_name(lid, "var")]
        bn_updates[tensor_name(lid, "mean")] = ((1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mu).astype(rm.dtype)
        bn_updates[tensor_name(lid, "var")] = ((1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased).astype(rv.dtype)
        out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        return out, ("train", xhat, inv, gamma, n)
    mu = params[tensor_name(lid, "mean")]
    var = params[tensor_name(lid, "var")]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, ("eval", xhat, inv, gamma, None)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(cache, grad_logits):
    """Gradients of a scalar loss w.r.t. every trainable tensor.

    ``grad_logits`` is dLoss/dlogits from the caller. The cache is
    single-use; reusing it raises (parameters may have changed since).
    """
    if cache.get("consumed"):
        raise EngineError("stale cache: backward already consumed this forward pass")
    if cache["mode"] != "train":
        raise EngineError("backward requires a train-mode forward cache")
    cache["consumed"] = True
    s = cache["snapshot"]
    params = cache["params"]
    records = cache["records"]
    grads = {}
    g = np.asarray(grad_logits)
    side = {}
    for b in reversed(s.blocks):
        for lid in reversed(b.layer_ids):
            lyr = s.layers[lid]
            kind = lyr.kind
            rec = records[lid]
            if kind == "conv":
                x_shape, patches = rec
                w = params[tensor_name(lid, "w")]
                if lyr.has_bias:
                    grads[tensor_name(lid, "b")] = g.sum(axis=(0, 2, 3))
                grads[tensor_name(lid, "w")] = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))
                dpatches = np.tensordot(g, w, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
                g = _col2im(np.ascontiguousarray(dpatches), x_shape, *lyr.stride, *lyr.padding)
            elif kind == "depthwise_conv":
                x_shape, patches = rec
                w = params[tensor_name(lid, "w")]
                if lyr.has_bias:
                    grads[tensor_name(lid, "b")] = g.sum(axis=(0, 2, 3))
                dw = np.einsum("bchw,bcijhw->cij", g, patches)
                grads[tensor_name(lid, "w")] = dw[:, None]
                dpatches = np.einsum("bchw,cij->bcijhw", g, w[:, 0])
                g = _col2im(np.ascontiguousarray(dpatches), x_shape, *lyr.stride, *lyr.padding)
            elif kind == "batch_norm":
                tag, xhat, inv, gamma, n = rec
                if tag != "train":
                    raise EngineError(f"layer {lid}: cannot backprop an eval-mode BN")
                grads[tensor_name(lid, "gamma")] = (g * xhat).sum(axis=(0, 2, 3))
                grads[tensor_name(lid, "beta")] = g.sum(axis=(0, 2, 3))
                dxhat = g * gamma[None, :, None, None]
                sum_d = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                g = (inv[None, :, None, None] / n) * (n * dxhat - sum_d - xhat * sum_dx)
            elif kind in ("relu", "relu6"):
                g = g * rec
            elif kind == "max_pool":
                x_shape, lyr_, idx, flat_shape = rec
                dflat = np.zeros(flat_shape, dtype=g.dtype)
                np.put_along_axis(dflat, idx[:, :, None], g[:, :, None], axis=2)
                kh, kw = lyr_.kernel
                dpatches = dflat.reshape(flat_shape[0], flat_shape[1], kh, kw, *flat_shape[3:])
                g = _col2im(dpatches, x_shape, *lyr_.stride, *lyr_.padding)
            elif kind == "avg_pool":
                x_shape, lyr_ = rec
                kh, kw = lyr_.kernel
                ho, wo = g.shape[2], g.shape[3]
                dpatches = np.broadcast_to(
                    (g / (kh * kw))[:, :, None, None], (g.shape[0], g.shape[1], kh, kw, ho, wo))
                g = _col2im(np.ascontiguousarray(dpatches), x_shape, *lyr_.stride, *lyr_.padding)
            elif kind == "global_avg_pool":
                n, c, h, w = rec
                g = np.broadcast_to(g / (h * w), (n, c, h, w)).copy()
            elif kind == "flatten":
                g = g.reshape(rec)
            elif kind == "fully_connected":
                x_in = rec
                w = params[tensor_name(lid, "w")]
                grads[tensor_name(lid, "w")] = g.T @ x_in
                if lyr.has_bias:
                    grads[tensor_name(lid, "b")] = g.sum(axis=0)
                g = g @ w
            elif kind == "add_residual":
                side[rec] = g
        if b.kind in ("residual", "inverted_residual") and b.id in side:
            g = g + side.pop(b.id)
    return grads


# ---------------------------------------------------------------------------
# BN recalibration and evaluation
# ---------------------------------------------------------------------------

def recalibrate_bn(s: ModelSnapshot, calib) -> ModelSnapshot:
    """Re-estimate every BN layer's running mean/var on a calibration slice.

    All trainable parameters stay untouched. The slice flows through the
    chain once; each BN's mean and (population) variance are aggregated
    over the entire slice before its output is produced, so downstream
    layers always see activations normalized with the fresh statistics.
    Memory scales with the largest activation over the whole slice.
    """
    x = np.asarray(calib.images, dtype=np.float32)
    if x.shape[0] == 0:
        raise EngineError("empty calibration slice")
    if tuple(x.shape[1:]) != tuple(s.input_shape):
        raise EngineError(f"calibration shape {x.shape[1:]} != input {s.input_shape}")
    new_weights = dict(s.weights)
    stash = {}
    for b in s.blocks:
        if b.kind in ("residual", "inverted_residual"):
            stash[b.id] = x
        for lid in b.layer_ids:
            lyr = s.layers[lid]
            if lyr.kind == "batch_norm":
                mu = x.mean(axis=(0, 2, 3), dtype=np.float64)
                var = x.var(axis=(0, 2, 3), dtype=np.float64)
                new_weights[tensor_name(lid, "mean")] = mu.astype(np.float32)
                new_weights[tensor_name(lid, "var")] = np.maximum(var, 1e-12).astype(np.float32)
                gamma = new_weights[tensor_name(lid, "gamma")]
                beta = new_weights[tensor_name(lid, "beta")]
                inv = 1.0 / np.sqrt(new_weights[tensor_name(lid, "var")] + BN_EPS)
                x = gamma[None, :, None, None] * (x - new_weights[tensor_name(lid, "mean")][None, :, None, None]) \
                    * inv[None, :, None, None] + beta[None, :, None, None]
            elif lyr.kind == "add_residual":
                x = x + stash[b.id]
            else:
                x = _apply_eval(s, lyr, x, new_weights)
    return s.with_weights(new_weights)


def _apply_eval(s, lyr, x, params):
    """Single-layer eval-mode application for non-BN, non-residual layers."""
    lid = lyr.id
    kind = lyr.kind
    if kind == "conv":
        w = params[tensor_name(lid, "w")]
        patches, ho, wo = _im2col(x, w.shape[2], w.shape[3], *lyr.stride, *lyr.padding)
        out = np.tensordot(patches, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        out = np.ascontiguousarray(out)
        if lyr.has_bias:
            out += params[tensor_name(lid, "b")][None, :, None, None]
        return out
    if kind == "depthwise_conv":
        w = params[tensor_name(lid, "w")]
        patches, ho, wo = _im2col(x, w.shape[2], w.shape[3], *lyr.stride, *lyr.padding)
        out = np.einsum("bcijhw,cij->bchw", patches, w[:, 0])
        if lyr.has_bias:
            out += params[tensor_name(lid, "b")][None, :, None, None]
        return out
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "relu6":
        return np.clip(x, 0, 6)
    if kind == "max_pool":
        patches, ho, wo = _im2col(x, *lyr.kernel, *lyr.stride, *lyr.padding, pad_value=-np.inf)
        return patches.max(axis=(2, 3))
    if kind == "avg_pool":
        patches, ho, wo = _im2col(x, *lyr.kernel, *lyr.stride, *lyr.padding)
        return patches.mean(axis=(2, 3))
    if kind == "global_avg_pool":
        return x.mean(axis=(2, 3), keepdims=True)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if kind == "fully_connected":
        w = params[tensor_name(lid, "w")]
        out = x @ w.T
        if lyr.has_bias:
            out = out + params[tensor_name(lid, "b")]
        return out
    raise EngineError(f"layer {lid}: unsupported kind {kind!r}")


def evaluate_accuracy(s: ModelSnapshot, data, batch_size=256) -> float:
    """Top-1 accuracy of eval-mode forward over a labeled slice."""
    n = len(data.labels)
    if n == 0:
        raise EngineError("empty evaluation slice")
    correct = 0
    for start in range(0, n, batch_size):
        imgs = data.images[start:start + batch_size]
        labels = data.labels[start:start + batch_size]
        logits, _ = forward(s, imgs, mode="eval")
        correct += int((logits.argmax(axis=1) == labels).sum())
    return correct / n
