"""Budget-driven channel planning.

Block keep-ratios are proportional to block importances through a single
factor alpha. Total cost is a nondecreasing step function of alpha (channel
counts are rounded and clamped), so the alpha matching a FLOPs budget is
found by bisection on the interval. The search runs to interval
convergence and then classifies the two configurations adjacent to the
crossing, which makes the resulting channel counts independent of the
initial interval. When rounding leaves no configuration inside the
tolerance band, the plan keeps the nearest cost from below and is flagged
``nearest_achievable`` (budgets are never exceeded in that case).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cost import ChannelConfig, CostReport, baseline_cost, evaluate_cost, identity_config
from .errors import PlanError
from .importance import ImportanceVector
from .model_ir import ModelSnapshot, producer_map


@dataclass
class Budget:
    """FLOPs target, either a fraction of baseline or an absolute count."""

    target_ratio: float = None
    target_flops: int = None
    tolerance: float = 0.01
    interval: tuple = (0.01, 100.0)
    max_iters: int = 200

    def resolve(self, baseline_flops):
        if (self.target_ratio is None) == (self.target_flops is None):
            raise PlanError("budget needs exactly one of target_ratio / target_flops")
        if self.target_ratio is not None:
            if not 0.0 < self.target_ratio <= 1.0:
                raise PlanError(f"target_ratio {self.target_ratio} outside (0, 1]")
            return self.target_ratio * baseline_flops
        if self.target_flops <= 0:
            raise PlanError(f"target_flops {self.target_flops} must be positive")
        return float(self.target_flops)

    def validate(self):
        a, b = self.interval
        if not (0 < a < b):
            raise PlanError(f"bad interval {self.interval}")
        if self.tolerance <= 0:
            raise PlanError("tolerance must be positive")
        if self.max_iters < 1:
            raise PlanError("max_iters must be >= 1")


@dataclass
class PruningPlan:
    alpha: float
    keep_ratios: dict
    config: ChannelConfig
    achieved: CostReport
    iterations: int
    baseline_flops: int
    target_flops: float
    nearest_achievable: bool = False
    next_cost_above: int = None

    def to_json(self):
        return {
            "alpha": self.alpha,
            "keep_ratios": {k: float(v) for k, v in self.keep_ratios.items()},
            "config": dict(self.config.channels),
            "achieved_flops": self.achieved.flops,
            "achieved_params": self.achieved.params,
            "baseline_flops": self.baseline_flops,
            "target_flops": self.target_flops,
            "flops_ratio": self.achieved.flops / self.baseline_flops if self.baseline_flops else 1.0,
            "iterations": self.iterations,
            "nearest_achievable": self.nearest_achievable,
            "next_cost_above": self.next_cost_above,
        }


def round_half_up(x):
    return int(math.floor(x + 0.5))


def ratios_to_config(s: ModelSnapshot, keep_ratios: dict) -> ChannelConfig:
    """Quantize per-block keep-ratios into a full channel configuration.

    Internal prunable layers of block i get ``clamp(round(c * min(R_i, 1)),
    1, c)`` output channels; depthwise layers inherit their producer's
    count; everything else keeps its original width.
    """
    channels = dict(identity_config(s).channels)
    for b in s.prunable_blocks():
        r = keep_ratios.get(b.id)
        if r is None:
            raise PlanError(f"keep_ratios missing prunable block {b.id!r}")
        if r < 0 or not math.isfinite(r):
            raise PlanError(f"block {b.id}: keep ratio {r} invalid")
        r = min(r, 1.0)
        for lid in b.internal_prunable_layer_ids:
            c = s.layers[lid].out_channels
            channels[lid] = max(1, min(c, round_half_up(c * r)))
    producers = producer_map(s)
    for lid in s.chain():
        if s.layers[lid].kind == "depthwise_conv":
            prev = producers[lid]
            # walk back to the nearest channel-deciding layer
            while prev is not None and prev not in channels:
                prev = producers[prev]
            if prev is not None:
                channels[lid] = channels[prev]
    return ChannelConfig(channels)


def monotone_cost(s: ModelSnapshot, imp: ImportanceVector, alpha: float) -> int:
    """Total FLOPs of the configuration generated by this alpha."""
    if alpha <= 0:
        raise PlanError(f"alpha must be positive, got {alpha}")
    ratios = {bid: alpha * imp.importances[bid] for bid in imp.importances}
    return evaluate_cost(s, ratios_to_config(s, ratios)).flops


def _plan_at(s, imp, alpha, iterations, baseline, target, nearest=False, next_above=None):
    ratios = {bid: min(alpha * imp.importances[bid], 1.0) for bid in imp.importances}
    cfg = ratios_to_config(s, {bid: alpha * imp.importances[bid] for bid in imp.importances})
    return PruningPlan(
        alpha=alpha, keep_ratios=ratios, config=cfg,
        achieved=evaluate_cost(s, cfg), iterations=iterations,
        baseline_flops=baseline, target_flops=target,
        nearest_achievable=nearest, next_cost_above=next_above,
    )


def bisect_alpha(s: ModelSnapshot, imp: ImportanceVector, budget: Budget) -> PruningPlan:
    """Solve for the proportionality factor meeting the FLOPs budget."""
    budget.validate()
    baseline = baseline_cost(s).flops
    target = budget.resolve(baseline)
    if target >= baseline:
        cfg = identity_config(s)
        pos = [v for v in imp.importances.values() if v > 0]
        alpha = 1.0 / min(pos) if len(pos) == len(imp.importances) else math.inf
        return PruningPlan(
            alpha=alpha, keep_ratios={bid: 1.0 for bid in imp.importances},
            config=cfg, achieved=evaluate_cost(s, cfg), iterations=0,
            baseline_flops=baseline, target_flops=target,
        )

    cost = lambda alpha: monotone_cost(s, imp, alpha)
    a, b = budget.interval

    # Widen until the interval brackets the target: cost(a) <= target < cost(b).
    widen = 0
    while cost(a) > target:
        a *= 0.5
        widen += 1
        if widen > 20:
            raise PlanError(
                f"target {target:.0f} FLOPs is below the minimum achievable cost "
                f"{cost(a)}; cannot bracket")
    widen = 0
    while cost(b) <= target:
        if cost(b) == target or b > 1e12:
            # already at/beyond the ceiling of the step function
            return _plan_at(s, imp, b, 0, baseline, target)
        b *= 2.0
        widen += 1
        if widen > 20:
            return _plan_at(s, imp, b, 0, baseline, target)

    # Bisection to convergence keeps the invariant cost(a) <= target < cost(b),
    # pinning the step boundary regardless of the starting interval.
    iterations = 0
    while iterations < budget.max_iters and (b - a) > 1e-12 * max(1.0, abs(b)):
        mid = 0.5 * (a + b)
        iterations += 1
        if cost(mid) <= target:
            a = mid
        else:
            b = mid
    cost_lo = cost(a)
    cost_hi = cost(b)
    band = budget.tolerance * target
    if abs(cost_lo - target) <= band:
        return _plan_at(s, imp, a, iterations, baseline, target)
    if abs(cost_hi - target) <= band:
        return _plan_at(s, imp, b, iterations, baseline, target)
    return _plan_at(s, imp, a, iterations, baseline, target, nearest=True, next_above=cost_hi)
