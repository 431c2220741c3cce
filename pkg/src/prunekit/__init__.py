"""Structured channel pruning toolkit.

The pipeline: train with an L1 penalty on BN scaling factors, score each
block by its mean |gamma|, bisect the proportionality factor until the
FLOPs budget is met, pick the best weight-inheritance criterion by
recalibrated-BN validation accuracy, then fine-tune.
"""

from .cost import ChannelConfig, CostReport, baseline_cost, evaluate_cost, identity_config
from .data import DataSlice, batches, load_cifar10, synthetic_dataset
from .engine import backward, evaluate_accuracy, forward, recalibrate_bn
from .errors import PruneKitError
from .importance import ImportanceVector, block_importance, importance_spread
from .inheritance import (Criterion, adaptive_inherit, build_pruned_snapshot,
                          geometric_median, select_channels)
from .model_ir import (ArchBuilder, BlockSpec, LayerSpec, ModelSnapshot,
                       builtin_arch, load_snapshot, save_snapshot, validate_snapshot)
from .pipeline import PipelineConfig, config_from_dict, run_ablation, run_pipeline
from .planner import Budget, PruningPlan, bisect_alpha, monotone_cost, ratios_to_config
from .trainer import LrSchedule, TrainConfig, cross_entropy, loss, train

__version__ = "0.1.0"
