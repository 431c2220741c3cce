"""Snapshots, the on-disk format, and FLOPs accounting.

Builds a few architectures, saves one to the manifest+blob format, loads
it back, and walks through cost reports under different channel widths.
"""

import os
import tempfile

import numpy as np

from prunekit import (ChannelConfig, baseline_cost, builtin_arch, evaluate_cost,
                      load_snapshot, save_snapshot)

print("=== builtin architectures ===")
for name, shape, classes in [("tiny_vgg", (3, 16, 16), 4),
                             ("vgg16", (3, 32, 32), 10),
                             ("resnet56", (3, 32, 32), 10),
                             ("mobile_ir", (3, 32, 32), 10)]:
    snap = builtin_arch(name, classes, shape, seed=0)
    rep = baseline_cost(snap)
    print(f"{name:10s}  blocks={len(snap.blocks):3d}  prunable={len(snap.prunable_blocks()):3d}"
          f"  flops={rep.flops:>12,}  params={rep.params:>11,}")

print("\n=== round-trip serialization ===")
snap = builtin_arch("tiny_vgg", 4, (3, 16, 16), seed=0)
with tempfile.TemporaryDirectory() as tmp:
    manifest = os.path.join(tmp, "tiny.manifest.json")
    blob = os.path.join(tmp, "tiny.weights.bin")
    save_snapshot(snap, manifest, blob)
    loaded = load_snapshot(manifest, blob)
    same = all(np.array_equal(loaded.weights[k], snap.weights[k]) for k in snap.weights)
    print(f"manifest: {os.path.getsize(manifest):,} bytes, blob: {os.path.getsize(blob):,} bytes")
    print(f"weights bit-identical after reload: {same}")

print("\n=== cost under narrower widths ===")
rep = baseline_cost(snap)
print(f"original: {rep.flops:,} FLOPs")
for frac in (0.75, 0.5, 0.25):
    channels = {b.id + ".conv": max(1, round(snap.layers[b.id + ".conv"].out_channels * frac))
                for b in snap.prunable_blocks()}
    cfg = ChannelConfig({**{lid: lyr.out_channels for lid, lyr in snap.layers.items()
                            if lyr.kind in ("conv", "fully_connected")}, **channels})
    sub = evaluate_cost(snap, cfg)
    print(f"widths x{frac}: {sub.flops:>10,} FLOPs  ({sub.flops / rep.flops:.3f} of baseline)")

print("\nper-layer breakdown at half width:")
for lid, (flops, params) in sub.per_layer.items():
    if flops:
        print(f"  {lid:12s} flops={flops:>9,}  params={params:>7,}  out={sub.spatial[lid]}")
