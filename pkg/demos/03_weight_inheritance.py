"""Weight inheritance criteria and adaptive selection.

With a pruning plan fixed, each criterion picks different surviving
channels. Recalibrating BN statistics on a small calibration slice makes
the candidates comparable in minutes; the most accurate one wins.
"""

import numpy as np

from prunekit import (Budget, Criterion, LrSchedule, TrainConfig, adaptive_inherit,
                      bisect_alpha, block_importance, builtin_arch, evaluate_accuracy,
                      geometric_median, select_channels, synthetic_dataset, train)

train_slice, val_slice = synthetic_dataset(num_classes=4, n_per_class=250,
                                           shape=(3, 16, 16), noise=0.05, seed=7)
base = builtin_arch("tiny_vgg", 4, (3, 16, 16), seed=0)
cfg = TrainConfig(epochs=8, batch_size=32,
                  lr=LrSchedule(kind="step", initial=0.05, drop_every=6, factor=0.1),
                  sparsity=1e-4, seed=3, mode="sparse")
snap, _ = train(base, train_slice, cfg)

print("geometric median of a toy filter set:")
pts = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]])
print(f"  points {pts.tolist()} -> median {geometric_median(pts).round(6).tolist()}")

imp = block_importance(snap)
plan = bisect_alpha(snap, imp, Budget(target_ratio=0.5))
print(f"\nplan at 50% budget: {plan.config.channels}")

print("\n=== channels each criterion keeps (first conv) ===")
for crit in (Criterion.l1_norm, Criterion.bn_weights, Criterion.geometric_median):
    sel = select_channels(snap, plan.config, crit)
    print(f"{crit.name:18s} b1.conv keeps {sel.kept['b1.conv']}")

print("\n=== adaptive selection by recalibrated accuracy ===")
best, chosen, accs = adaptive_inherit(snap, plan.config, train_slice, val_slice, seed=3)
for crit, acc in accs.items():
    marker = "  <- chosen" if crit is best else ""
    print(f"{crit.name:18s} recalibrated top-1 = {acc:.4f}{marker}")
print(f"\nvalidation accuracy of the winner: {evaluate_accuracy(chosen, val_slice):.4f}")
