"""Command-line driver for the pruning pipeline.

Subcommands map onto pipeline stages (sparse-train, importance, plan,
inherit, finetune), plus eval/report utilities and the end-to-end
pipeline / ablation drivers. All take a JSON config file; results print
as JSON on stdout. Exit code is 0 on success, 1 on failure with a
stage-tagged message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import engine
from .cost import ChannelConfig, baseline_cost, evaluate_cost
from .errors import PruneKitError, StageError
from .inheritance import Criterion
from .model_ir import load_snapshot
from .pipeline import PipelineRun, load_config, load_dataset
from .planner import Budget


def _emit(obj):
    json.dump(obj, sys.stdout, indent=1, default=str)
    sys.stdout.write("\n")


def _load_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.sparse.seed = args.seed
        cfg.finetune.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    return cfg


def cmd_sparse_train(args):
    run = PipelineRun(_load_run(args))
    try:
        run.stage_sparse_train()
    except PruneKitError as e:
        raise StageError("sparse_train", e) from e
    _emit({"stage": "sparse_train", "artifacts": run.snapshot_paths("sparse")})


def cmd_importance(args):
    run = PipelineRun(_load_run(args))
    try:
        imp = run.stage_importance()
    except PruneKitError as e:
        raise StageError("importance", e) from e
    _emit(imp.to_json())


def cmd_plan(args):
    cfg = _load_run(args)
    if args.target_flops_ratio is not None:
        cfg.budget = Budget(target_ratio=args.target_flops_ratio,
                            tolerance=cfg.budget.tolerance,
                            interval=cfg.budget.interval,
                            max_iters=cfg.budget.max_iters)
    if args.tolerance is not None:
        cfg.budget.tolerance = args.tolerance
    if args.interval_lo is not None or args.interval_hi is not None:
        lo = args.interval_lo if args.interval_lo is not None else cfg.budget.interval[0]
        hi = args.interval_hi if args.interval_hi is not None else cfg.budget.interval[1]
        cfg.budget.interval = (lo, hi)
    run = PipelineRun(cfg)
    try:
        plan = run.stage_plan()
    except PruneKitError as e:
        raise StageError("plan", e) from e
    _emit(plan.to_json())


def cmd_inherit(args):
    cfg = _load_run(args)
    if args.criterion is not None:
        cfg.inherit_mode = args.criterion if args.criterion == "adaptive" \
            else Criterion.parse(args.criterion).name
    run = PipelineRun(cfg)
    try:
        best, _, accs = run.stage_inherit()
    except PruneKitError as e:
        raise StageError("inherit", e) from e
    _emit({"chosen": best.name,
           "recalibrated_accuracy": {c.name: a for c, a in accs.items()}})


def cmd_finetune(args):
    run = PipelineRun(_load_run(args))
    try:
        tuned = run.stage_finetune()
        acc = engine.evaluate_accuracy(tuned, run.val_data)
    except PruneKitError as e:
        raise StageError("finetune", e) from e
    _emit({"stage": "finetune", "final_accuracy": acc,
           "artifacts": run.snapshot_paths("final")})


def cmd_eval(args):
    cfg = load_config(args.config) if args.config else None
    snap = load_snapshot(args.manifest, args.blob)
    if cfg is None:
        raise PruneKitError("eval needs --config for the dataset")
    train, val = load_dataset(cfg.dataset, seed=cfg.seed)
    data = train if args.split == "train" else val
    _emit({"accuracy": engine.evaluate_accuracy(snap, data), "split": args.split,
           "n": len(data)})


def cmd_report(args):
    snap = load_snapshot(args.manifest, args.blob)
    if args.plan:
        with open(args.plan) as f:
            config = ChannelConfig(dict(json.load(f)["config"]))
        report = evaluate_cost(snap, config)
    else:
        report = baseline_cost(snap)
    _emit(report.to_json())


def cmd_pipeline(args):
    run = PipelineRun(_load_run(args))
    _emit(run.run(from_stage=args.from_stage))


def cmd_ablation(args):
    run = PipelineRun(_load_run(args))
    _emit(run.run_ablation(from_stage=args.from_stage))


def build_parser():
    p = argparse.ArgumentParser(prog="prunekit",
                                description="Budget-driven structured channel pruning")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="pipeline config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the global seed")
        sp.add_argument("--out-dir", default=None, help="override the artifact directory")

    sp = sub.add_parser("sparse-train", help="train with the L1 gamma penalty")
    common(sp)
    sp.set_defaults(func=cmd_sparse_train)

    sp = sub.add_parser("importance", help="per-block BN importances of the sparse snapshot")
    common(sp)
    sp.set_defaults(func=cmd_importance)

    sp = sub.add_parser("plan", help="bisection search for the budgeted channel config")
    common(sp)
    sp.add_argument("--target-flops-ratio", type=float, default=None)
    sp.add_argument("--tolerance", type=float, default=None)
    sp.add_argument("--interval-lo", type=float, default=None)
    sp.add_argument("--interval-hi", type=float, default=None)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("inherit", help="build the pruned network from the plan")
    common(sp)
    sp.add_argument("--criterion", choices=["l1", "bn", "gm", "random", "adaptive"], default=None)
    sp.set_defaults(func=cmd_inherit)

    sp = sub.add_parser("finetune", help="fine-tune the inherited snapshot")
    common(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="top-1 accuracy of a snapshot")
    common(sp, config_required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--blob", required=True)
    sp.add_argument("--split", choices=["train", "val"], default="val")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="FLOPs/params of a snapshot (optionally under a plan)")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--blob", required=True)
    sp.add_argument("--plan", default=None, help="plan.json to apply before costing")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("pipeline", help="run every stage end to end")
    common(sp)
    sp.add_argument("--from-stage", default=None,
                    choices=["sparse_train", "importance", "plan", "inherit", "finetune"])
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("ablation", help="all four criteria on one fixed plan")
    common(sp)
    sp.add_argument("--from-stage", default=None,
                    choices=["sparse_train", "importance", "plan"])
    sp.set_defaults(func=cmd_ablation)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except PruneKitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
