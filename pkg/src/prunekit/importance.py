"""Block importance from BN scaling factors.

Each prunable block's raw score is the mean absolute value of the gamma
parameters of its prunable BN layers; importances are those means
normalized to sum to one. Scores are invariant to a global rescaling of
gamma and to channel permutations within a layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImportanceError
from .model_ir import ModelSnapshot, tensor_name


@dataclass
class ImportanceVector:
    importances: dict   # block id -> I_i, sums to 1
    means: dict         # block id -> mean |gamma|

    def to_json(self):
        return {
            bid: {"importance": float(self.importances[bid]), "mean_abs_gamma": float(self.means[bid])}
            for bid in self.importances
        }


def block_importance(s: ModelSnapshot) -> ImportanceVector:
    """Normalized per-block importances over the snapshot's prunable blocks."""
    means = {}
    for b in s.prunable_blocks():
        if not b.prunable_bn_ids:
            raise ImportanceError(f"block {b.id}: prunable block has no BN layers to score")
        gammas = []
        for bn in b.prunable_bn_ids:
            g = s.weights.get(tensor_name(bn, "gamma"))
            if g is None:
                raise ImportanceError(f"block {b.id}: missing gamma tensor for {bn}")
            gammas.append(np.abs(np.asarray(g, dtype=np.float64)))
        means[b.id] = float(np.concatenate(gammas).mean())
    if not means:
        raise ImportanceError("snapshot has no prunable blocks")
    total = sum(means.values())
    if total <= 0.0:
        raise ImportanceError("all BN scaling factors are zero; importances undefined")
    return ImportanceVector({bid: m / total for bid, m in means.items()}, means)


def importance_spread(v: ImportanceVector) -> float:
    """Max minus min importance; 0 for a single block or a uniform vector."""
    vals = list(v.importances.values())
    if len(vals) <= 1:
        return 0.0
    return float(max(vals) - min(vals))
