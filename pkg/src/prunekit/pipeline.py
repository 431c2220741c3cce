"""End-to-end orchestration: sparse training, importance scoring, budget
planning, adaptive weight inheritance, and fine-tuning.

Every stage writes its artifact under the output directory, so a run can
be resumed from any stage (``from_stage``) without repeating the earlier,
more expensive ones; in particular a new budget only needs the stored
sparse snapshot, not retraining. Identical config + seed reproduces every
artifact byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from . import engine, trainer
from .cost import ChannelConfig, baseline_cost, evaluate_cost
from .data import load_cifar10, synthetic_dataset
from .errors import PruneKitError, StageError
from .importance import ImportanceVector, block_importance, importance_spread
from .inheritance import Criterion, adaptive_inherit, build_pruned_snapshot, select_channels
from .model_ir import builtin_arch, load_snapshot, save_snapshot
from .planner import Budget, bisect_alpha
from .trainer import TrainConfig

STAGES = ("sparse_train", "importance", "plan", "inherit", "finetune")


@dataclass
class PipelineConfig:
    out_dir: str
    seed: int = 0
    arch: dict = None            # {"name", "num_classes", "input_shape"}
    snapshot: dict = None        # {"manifest", "blob"} for an externally trained model
    dataset: dict = field(default_factory=dict)
    sparse: TrainConfig = field(default_factory=lambda: TrainConfig(mode="sparse"))
    budget: Budget = field(default_factory=lambda: Budget(target_ratio=0.5))
    inherit_mode: str = "adaptive"          # "adaptive" or a fixed criterion name
    calib_size: int = 2048
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(mode="finetune", sparsity=0.0))

    def validate(self):
        if (self.arch is None) == (self.snapshot is None):
            raise PruneKitError("config needs exactly one of arch / snapshot")
        if not self.dataset:
            raise PruneKitError("config needs a dataset section")


def config_from_dict(d) -> PipelineConfig:
    budget = d.get("budget", {})
    interval = budget.get("interval", (0.01, 100.0))
    cfg = PipelineConfig(
        out_dir=d["out_dir"],
        seed=int(d.get("seed", 0)),
        arch=d.get("arch"),
        snapshot=d.get("snapshot"),
        dataset=d.get("dataset", {}),
        sparse=TrainConfig.from_json({"mode": "sparse", **d.get("sparse", {})}),
        budget=Budget(
            target_ratio=budget.get("target_ratio"),
            target_flops=budget.get("target_flops"),
            tolerance=float(budget.get("tolerance", 0.01)),
            interval=(float(interval[0]), float(interval[1])),
            max_iters=int(budget.get("max_iters", 200)),
        ),
        inherit_mode=str(d.get("inherit_mode", "adaptive")),
        calib_size=int(d.get("calib_size", 2048)),
        finetune=TrainConfig.from_json({"mode": "finetune", "sparsity": 0.0, **d.get("finetune", {})}),
    )
    # one global seed propagates to every seeded component unless overridden
    if "seed" not in d.get("sparse", {}):
        cfg.sparse.seed = cfg.seed
    if "seed" not in d.get("finetune", {}):
        cfg.finetune.seed = cfg.seed
    return cfg


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def load_dataset(spec, seed=0):
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        return synthetic_dataset(
            num_classes=int(spec.get("num_classes", 4)),
            n_per_class=int(spec.get("n_per_class", 250)),
            shape=tuple(spec.get("shape", (3, 16, 16))),
            noise=float(spec.get("noise", 0.05)),
            seed=int(spec.get("seed", seed)),
        )
    if kind == "cifar10":
        return load_cifar10(spec["dir"], "train"), load_cifar10(spec["dir"], "test")
    raise PruneKitError(f"unknown dataset kind {kind!r}")


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, default=str)


def _write_jsonl(path, rows):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


class PipelineRun:
    """Stage-by-stage execution with file artifacts under ``cfg.out_dir``."""

    def __init__(self, cfg: PipelineConfig):
        cfg.validate()
        self.cfg = cfg
        self.out = cfg.out_dir
        os.makedirs(self.out, exist_ok=True)
        self.train_data, self.val_data = load_dataset(cfg.dataset, seed=cfg.seed)
        self.calib = self.train_data.take(cfg.calib_size)

    # -- artifact paths ------------------------------------------------------

    def _p(self, name):
        return os.path.join(self.out, name)

    def snapshot_paths(self, tag):
        return self._p(f"{tag}.manifest.json"), self._p(f"{tag}.weights.bin")

    # -- stages ---------------------------------------------------------------

    def baseline_snapshot(self):
        if self.cfg.arch is not None:
            a = self.cfg.arch
            return builtin_arch(a["name"], int(a["num_classes"]),
                                tuple(a["input_shape"]), seed=int(a.get("seed", self.cfg.seed)))
        return load_snapshot(self.cfg.snapshot["manifest"], self.cfg.snapshot["blob"])

    def stage_sparse_train(self):
        base = self.baseline_snapshot()
        trained, history = trainer.train(base, self.train_data, self.cfg.sparse)
        save_snapshot(trained, *self.snapshot_paths("sparse"))
        _write_jsonl(self._p("metrics_sparse.jsonl"), history)
        return trained

    def load_sparse(self):
        return load_snapshot(*self.snapshot_paths("sparse"))

    def stage_importance(self, sparse=None):
        sparse = sparse if sparse is not None else self.load_sparse()
        imp = block_importance(sparse)
        _write_json(self._p("importance.json"), {
            "blocks": imp.to_json(), "spread": importance_spread(imp)})
        return imp

    def load_importance(self):
        with open(self._p("importance.json")) as f:
            d = json.load(f)["blocks"]
        return ImportanceVector(
            {bid: v["importance"] for bid, v in d.items()},
            {bid: v["mean_abs_gamma"] for bid, v in d.items()})

    def stage_plan(self, sparse=None, imp=None):
        sparse = sparse if sparse is not None else self.load_sparse()
        imp = imp if imp is not None else self.load_importance()
        plan = bisect_alpha(sparse, imp, self.cfg.budget)
        _write_json(self._p("plan.json"), plan.to_json())
        return plan

    def load_plan_config(self):
        with open(self._p("plan.json")) as f:
            return ChannelConfig(dict(json.load(f)["config"]))

    def stage_inherit(self, sparse=None, config=None):
        sparse = sparse if sparse is not None else self.load_sparse()
        config = config if config is not None else self.load_plan_config()
        if self.cfg.inherit_mode == "adaptive":
            best, snap, accs = adaptive_inherit(sparse, config, self.calib,
                                                self.val_data, seed=self.cfg.seed)
        else:
            best = Criterion.parse(self.cfg.inherit_mode)
            sel = select_channels(sparse, config, best)
            snap = build_pruned_snapshot(sparse, config, sel, best, seed=self.cfg.seed)
            snap = engine.recalibrate_bn(snap, self.calib)
            accs = {best: engine.evaluate_accuracy(snap, self.val_data)}
        save_snapshot(snap, *self.snapshot_paths("inherited"))
        _write_json(self._p("inherit.json"), {
            "chosen": best.name,
            "recalibrated_accuracy": {c.name: acc for c, acc in accs.items()},
        })
        return best, snap, accs

    def load_inherited(self):
        return load_snapshot(*self.snapshot_paths("inherited"))

    def stage_finetune(self, snap=None):
        snap = snap if snap is not None else self.load_inherited()
        tuned, history = trainer.train(snap, self.train_data, self.cfg.finetune)
        save_snapshot(tuned, *self.snapshot_paths("final"))
        _write_jsonl(self._p("metrics_finetune.jsonl"), history)
        return tuned

    # -- drivers ---------------------------------------------------------------

    def run(self, from_stage=None):
        """Execute all stages (optionally resuming) and write report.json."""
        if from_stage is not None and from_stage not in STAGES:
            raise PruneKitError(f"unknown stage {from_stage!r}; stages: {STAGES}")
        start = STAGES.index(from_stage) if from_stage else 0

        def should(stage):
            return STAGES.index(stage) >= start

        sparse = imp = plan = None
        best = accs = tuned = None
        stage = "sparse_train"
        try:
            sparse = self.stage_sparse_train() if should(stage) else self.load_sparse()
            stage = "importance"
            imp = self.stage_importance(sparse) if should(stage) else self.load_importance()
            stage = "plan"
            plan = self.stage_plan(sparse, imp) if should(stage) else None
            config = plan.config if plan is not None else self.load_plan_config()
            stage = "inherit"
            if should(stage):
                best, snap, accs = self.stage_inherit(sparse, config)
            else:
                snap = self.load_inherited()
                with open(self._p("inherit.json")) as f:
                    d = json.load(f)
                best = Criterion[d["chosen"]]
                accs = {Criterion[k]: v for k, v in d["recalibrated_accuracy"].items()}
            stage = "finetune"
            tuned = self.stage_finetune(snap)
            stage = "report"
            base = self.baseline_snapshot()
            baseline_flops = baseline_cost(base).flops
            achieved = evaluate_cost(sparse, config).flops
            report = {
                "seed": self.cfg.seed,
                "baseline_flops": baseline_flops,
                "achieved_flops": achieved,
                "flops_ratio": achieved / baseline_flops if baseline_flops else 1.0,
                "chosen_criterion": best.name,
                "recalibrated_accuracy": {c.name: a for c, a in accs.items()},
                "final_accuracy": engine.evaluate_accuracy(tuned, self.val_data),
                "artifacts": {
                    "sparse": self.snapshot_paths("sparse"),
                    "importance": self._p("importance.json"),
                    "plan": self._p("plan.json"),
                    "inherit": self._p("inherit.json"),
                    "inherited": self.snapshot_paths("inherited"),
                    "final": self.snapshot_paths("final"),
                    "metrics": [self._p("metrics_sparse.jsonl"), self._p("metrics_finetune.jsonl")],
                },
            }
            _write_json(self._p("report.json"), report)
            return report
        except PruneKitError as e:
            if isinstance(e, StageError):
                raise
            raise StageError(stage, e) from e

    def run_ablation(self, from_stage=None):
        """All four criteria on one fixed plan; recalibrated vs fine-tuned accuracy."""
        start = STAGES.index(from_stage) if from_stage else 0
        stage = "sparse_train"
        try:
            sparse = self.stage_sparse_train() if start == 0 else self.load_sparse()
            stage = "importance"
            imp = self.stage_importance(sparse) if start <= 1 else self.load_importance()
            stage = "plan"
            plan = self.stage_plan(sparse, imp) if start <= 2 else None
            config = plan.config if plan is not None else self.load_plan_config()
            stage = "ablation"
            table = {}
            for crit in Criterion:
                sel = select_channels(sparse, config, crit)
                snap = build_pruned_snapshot(sparse, config, sel, crit, seed=self.cfg.seed)
                recal = engine.recalibrate_bn(snap, self.calib)
                re_acc = engine.evaluate_accuracy(recal, self.val_data)
                tuned, _ = trainer.train(recal, self.train_data, self.cfg.finetune)
                final_acc = engine.evaluate_accuracy(tuned, self.val_data)
                table[crit.name] = {"recalibrated": re_acc, "final": final_acc}
            _write_json(self._p("ablation.json"), table)
            return table
        except PruneKitError as e:
            if isinstance(e, StageError):
                raise
            raise StageError(stage, e) from e


def run_pipeline(cfg: PipelineConfig, from_stage=None):
    return PipelineRun(cfg).run(from_stage=from_stage)


def run_ablation(cfg: PipelineConfig, from_stage=None):
    return PipelineRun(cfg).run_ablation(from_stage=from_stage)
