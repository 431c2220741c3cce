"""Block importances from BN scaling factors and bisection planning.

Sparse-trains a small network on the synthetic dataset, shows how the
gamma magnitudes turn into normalized block importances, and solves for
channel configurations at several FLOPs budgets. Note that re-planning at
a new budget reuses the same trained snapshot: no retraining involved.
"""

from prunekit import (Budget, LrSchedule, TrainConfig, baseline_cost, bisect_alpha,
                      block_importance, builtin_arch, importance_spread,
                      monotone_cost, synthetic_dataset, train)

train_slice, val_slice = synthetic_dataset(num_classes=4, n_per_class=250,
                                           shape=(3, 16, 16), noise=0.05, seed=7)
base = builtin_arch("tiny_vgg", 4, (3, 16, 16), seed=0)

print("sparse training (L1 on BN gammas, lambda=1e-4)...")
cfg = TrainConfig(epochs=8, batch_size=32,
                  lr=LrSchedule(kind="step", initial=0.05, drop_every=6, factor=0.1),
                  sparsity=1e-4, seed=3, mode="sparse")
snap, history = train(base, train_slice, cfg)
print(f"final train accuracy: {history[-1]['accuracy']:.3f}")

imp = block_importance(snap)
print("\n=== block importances ===")
for bid, val in imp.importances.items():
    bar = "#" * int(val * 120)
    print(f"{bid:6s} mean|g|={imp.means[bid]:.4f}  I={val:.4f}  {bar}")
print(f"importance spread: {importance_spread(imp):.4f}")

print("\n=== cost is monotone in the proportionality factor ===")
for alpha in (0.5, 1.0, 2.0, 4.0, 8.0):
    print(f"alpha={alpha:5.2f} -> {monotone_cost(snap, imp, alpha):>10,} FLOPs")

print("\n=== bisection planning at several budgets ===")
baseline = baseline_cost(snap).flops
for ratio in (0.73, 0.5, 0.27):
    plan = bisect_alpha(snap, imp, Budget(target_ratio=ratio))
    tag = " (nearest achievable)" if plan.nearest_achievable else ""
    print(f"target {ratio:.2f}: alpha={plan.alpha:8.4f}  achieved "
          f"{plan.achieved.flops / baseline:.4f}  iters={plan.iterations}{tag}")
    print(f"           channels: { {k: v for k, v in plan.config.channels.items() if 'conv' in k} }")
