"""Weight inheritance for pruned sub-networks.

Given a channel configuration, each criterion picks which original
channels survive per layer:

* ``l1_norm``   -- keep filters with the largest kernel L1 norms.
* ``bn_weights`` -- keep channels with the largest |gamma| in the conv's BN.
* ``geometric_median`` -- drop the filters closest to the geometric median
  of the layer's filters (they are the most redundant); keep the rest.
* ``random_init`` -- keep-first sentinel selection; weights are re-drawn
  from a seeded initializer instead of inherited.

Ties break toward the lower original index in whichever set is being
built (the keep set for score criteria, the prune set for the
geometric-median rule). The adaptive step recalibrates BN statistics for
each candidate and picks the criterion with the best validation accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import engine
from .cost import ChannelConfig
from .errors import InheritError
from .model_ir import ModelSnapshot, shape_map, tensor_name, validate_snapshot


class Criterion(Enum):
    l1_norm = "l1"
    bn_weights = "bn"
    geometric_median = "gm"
    random_init = "random"

    @staticmethod
    def parse(text):
        for c in Criterion:
            if text in (c.name, c.value):
                return c
        raise InheritError(f"unknown criterion {text!r}")


@dataclass
class ChannelSelection:
    kept: dict   # layer id -> sorted list of kept original channel indices


def geometric_median(points, tol=1e-8, max_iters=1000):
    """Weiszfeld iteration for the point minimizing summed euclidean distance.

    A single point is its own median and two points return their midpoint.
    If an iterate lands within tol of an input point, restart once from
    the coordinate-wise median plus a tiny deterministic offset; if it
    happens again that data point is the answer.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise InheritError("geometric_median needs a non-empty list of vectors")
    if len(pts) == 1:
        return pts[0].copy()
    if len(pts) == 2:
        return 0.5 * (pts[0] + pts[1])
    x = pts.mean(axis=0)
    restarted = False
    for _ in range(max_iters):
        d = np.linalg.norm(pts - x, axis=1)
        hits = d < tol
        if hits.any():
            if restarted:
                return pts[int(np.argmax(hits))].copy()
            restarted = True
            x = np.median(pts, axis=0) + 1e-6
            continue
        wts = 1.0 / d
        x_new = (pts * wts[:, None]).sum(axis=0) / wts.sum()
        if np.linalg.norm(x_new - x) < tol:
            return x_new
        x = x_new
    return x


def median_objective(points, x):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(pts - np.asarray(x, dtype=np.float64), axis=1).sum())


def _keep_top(scores, k):
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return sorted(int(i) for i in order[:k])


def _keep_after_pruning_nearest(dists, k_prune):
    order = np.argsort(np.asarray(dists, dtype=np.float64), kind="stable")
    pruned = set(int(i) for i in order[:k_prune])
    return sorted(i for i in range(len(dists)) if i not in pruned)


def _following_bn(s, block, lid):
    ids = list(block.layer_ids)
    for other in ids[ids.index(lid) + 1:]:
        if s.layers[other].kind == "batch_norm":
            return other
    return None


def select_channels(s: ModelSnapshot, cfg: ChannelConfig, crit: Criterion) -> ChannelSelection:
    """Kept original-channel indices per conv/depthwise layer under cfg."""
    kept = {}
    for b in s.blocks:
        for lid in b.layer_ids:
            lyr = s.layers[lid]
            if lyr.kind == "depthwise_conv":
                # channel identity chains through depthwise convs
                prev = [p for p in b.layer_ids[:b.layer_ids.index(lid)]
                        if s.layers[p].kind == "conv"]
                if not prev or prev[-1] not in kept:
                    raise InheritError(f"layer {lid}: no preceding conv selection to inherit")
                kept[lid] = list(kept[prev[-1]])
                continue
            if lyr.kind != "conv":
                continue
            c = lyr.out_channels
            k = cfg.get(lid, c)
            if not 1 <= k <= c:
                raise InheritError(f"layer {lid}: config keeps {k} of {c} channels")
            if k == c or crit is Criterion.random_init:
                kept[lid] = list(range(k))
                continue
            w = s.weights[tensor_name(lid, "w")]
            if crit is Criterion.l1_norm:
                scores = np.abs(w).sum(axis=(1, 2, 3))
                kept[lid] = _keep_top(scores, k)
            elif crit is Criterion.bn_weights:
                bn = _following_bn(s, b, lid)
                if bn is None:
                    raise InheritError(f"layer {lid}: bn_weights criterion needs a BN after the conv")
                scores = np.abs(s.weights[tensor_name(bn, "gamma")])
                kept[lid] = _keep_top(scores, k)
            elif crit is Criterion.geometric_median:
                filters = w.reshape(c, -1)
                gm = geometric_median(filters)
                dists = np.linalg.norm(filters.astype(np.float64) - gm[None], axis=1)
                kept[lid] = _keep_after_pruning_nearest(dists, c - k)
            else:
                raise InheritError(f"unsupported criterion {crit}")
    return ChannelSelection(kept)


def _fresh_weights(rng, layers_by_id, chain):
    """Seeded from-scratch initialization for a (possibly pruned) skeleton."""
    weights = {}
    for lid in chain:
        lyr = layers_by_id[lid]
        if lyr.kind in ("conv", "depthwise_conv"):
            kh, kw = lyr.kernel
            cin = 1 if lyr.kind == "depthwise_conv" else lyr.in_channels
            fan_in = (kh * kw) if lyr.kind == "depthwise_conv" else cin * kh * kw
            bound = np.sqrt(6.0 / fan_in)
            weights[tensor_name(lid, "w")] = rng.uniform(
                -bound, bound, size=(lyr.out_channels, cin, kh, kw)).astype(np.float32)
            if lyr.has_bias:
                weights[tensor_name(lid, "b")] = np.zeros(lyr.out_channels, dtype=np.float32)
        elif lyr.kind == "fully_connected":
            bound = np.sqrt(6.0 / lyr.in_channels)
            weights[tensor_name(lid, "w")] = rng.uniform(
                -bound, bound, size=(lyr.out_channels, lyr.in_channels)).astype(np.float32)
            if lyr.has_bias:
                weights[tensor_name(lid, "b")] = np.zeros(lyr.out_channels, dtype=np.float32)
        elif lyr.kind == "batch_norm":
            c = lyr.out_channels
            weights[tensor_name(lid, "gamma")] = np.ones(c, dtype=np.float32)
            weights[tensor_name(lid, "beta")] = np.zeros(c, dtype=np.float32)
            weights[tensor_name(lid, "mean")] = np.zeros(c, dtype=np.float32)
            weights[tensor_name(lid, "var")] = np.ones(c, dtype=np.float32)
    return weights


def build_pruned_snapshot(s: ModelSnapshot, cfg: ChannelConfig, sel: ChannelSelection,
                          crit: Criterion, seed=0) -> ModelSnapshot:
    """Materialize the pruned network, slicing weights along the kept indices."""
    shapes = shape_map(s, cfg.channels)
    layers = {lid: replace(lyr, in_channels=shapes[lid][0], out_channels=shapes[lid][1])
              for lid, lyr in s.layers.items()}
    pruned = ModelSnapshot(
        format_version=s.format_version, arch_name=s.arch_name,
        input_shape=s.input_shape, num_classes=s.num_classes,
        blocks=s.blocks, layers=layers, weights={},
    )

    if crit is Criterion.random_init:
        rng = np.random.default_rng(seed)
        pruned.weights = _fresh_weights(rng, layers, pruned.chain())
        return validate_snapshot(pruned)

    weights = {}
    identity = list(range(s.input_shape[0]))
    last_flatten = None
    block_entry = {}
    for b in s.blocks:
        if b.kind in ("residual", "inverted_residual"):
            block_entry[b.id] = list(identity)
        for lid in b.layer_ids:
            lyr = s.layers[lid]
            kind = lyr.kind
            if kind == "conv":
                kept_out = sel.kept.get(lid)
                if kept_out is None or len(kept_out) != layers[lid].out_channels:
                    raise InheritError(f"layer {lid}: selection inconsistent with config")
                w = s.weights[tensor_name(lid, "w")]
                weights[tensor_name(lid, "w")] = np.ascontiguousarray(
                    w[np.ix_(kept_out, identity)])
                if lyr.has_bias:
                    weights[tensor_name(lid, "b")] = s.weights[tensor_name(lid, "b")][kept_out].copy()
                identity = list(kept_out)
            elif kind == "depthwise_conv":
                kept = sel.kept.get(lid)
                if kept != identity:
                    raise InheritError(f"layer {lid}: depthwise selection must match its producer")
                weights[tensor_name(lid, "w")] = s.weights[tensor_name(lid, "w")][kept].copy()
            elif kind == "batch_norm":
                for role in ("gamma", "beta", "mean", "var"):
                    weights[tensor_name(lid, role)] = s.weights[tensor_name(lid, role)][identity].copy()
            elif kind == "flatten":
                last_flatten = lid
            elif kind == "fully_connected":
                w = s.weights[tensor_name(lid, "w")]
                if last_flatten is not None:
                    # channel c of the flattened activation occupies the
                    # contiguous column block [c*H*W, (c+1)*H*W)
                    flat = s.layers[last_flatten]
                    hw = flat.out_channels // flat.in_channels
                    cols = [c * hw + k for c in identity for k in range(hw)]
                else:
                    cols = identity
                weights[tensor_name(lid, "w")] = np.ascontiguousarray(w[:, cols])
                if lyr.has_bias:
                    weights[tensor_name(lid, "b")] = s.weights[tensor_name(lid, "b")].copy()
                identity = list(range(lyr.out_channels))
                last_flatten = None
            elif kind == "add_residual":
                if identity != block_entry.get(b.id):
                    raise InheritError(f"layer {lid}: selection chain broken across residual add")
    pruned.weights = weights
    return validate_snapshot(pruned)


def adaptive_inherit(s: ModelSnapshot, cfg: ChannelConfig, calib, val, seed=0,
                     criteria=None):
    """Try every criterion, recalibrate BN stats, keep the most accurate.

    Returns (best criterion, its recalibrated snapshot, {criterion: accuracy}).
    Ties go to the earlier criterion in enum order.
    """
    criteria = list(Criterion) if criteria is None else list(criteria)
    accuracies = {}
    best = None
    best_snap = None
    for crit in criteria:
        sel = select_channels(s, cfg, crit)
        snap = build_pruned_snapshot(s, cfg, sel, crit, seed=seed)
        recal = engine.recalibrate_bn(snap, calib)
        acc = engine.evaluate_accuracy(recal, val)
        accuracies[crit] = acc
        if best is None or acc > accuracies[best]:
            best = crit
            best_snap = recal
    return best, best_snap, accuracies
