"""The whole flow end to end, with resumable file artifacts.

sparse-train -> importance -> plan -> adaptive inherit -> fine-tune,
then a second budget that reuses the stored sparse snapshot instead of
retraining. Equivalent CLI:

    prunekit pipeline --config config.json
    prunekit plan     --config config.json --target-flops-ratio 0.73
"""

import json
import os
import tempfile

from prunekit.pipeline import PipelineRun, config_from_dict

with tempfile.TemporaryDirectory() as tmp:
    out_dir = os.path.join(tmp, "artifacts")
    cfg = {
        "out_dir": out_dir,
        "seed": 0,
        "arch": {"name": "tiny_vgg", "num_classes": 4, "input_shape": [3, 16, 16]},
        "dataset": {"kind": "synthetic", "num_classes": 4, "n_per_class": 250,
                    "shape": [3, 16, 16], "noise": 0.05, "seed": 7},
        "sparse": {"epochs": 8, "batch_size": 32, "sparsity": 1e-4,
                   "lr": {"kind": "step", "initial": 0.05, "drop_every": 6, "factor": 0.1}},
        "budget": {"target_ratio": 0.5, "tolerance": 0.01},
        "inherit_mode": "adaptive",
        "calib_size": 800,
        "finetune": {"epochs": 2, "batch_size": 32,
                     "lr": {"kind": "step", "initial": 0.01}},
    }
    print("running the full pipeline at a 50% FLOPs budget...")
    report = PipelineRun(config_from_dict(cfg)).run()
    print(json.dumps({k: v for k, v in report.items() if k != "artifacts"}, indent=2))

    print("\nartifacts written:")
    for name in sorted(os.listdir(out_dir)):
        print(f"  {name:28s} {os.path.getsize(os.path.join(out_dir, name)):>9,} bytes")

    print("\nre-planning at a 73% budget, reusing the stored sparse snapshot...")
    cfg73 = dict(cfg, budget={"target_ratio": 0.73, "tolerance": 0.01})
    report73 = PipelineRun(config_from_dict(cfg73)).run(from_stage="plan")
    print(f"new achieved ratio: {report73['flops_ratio']:.4f} "
          f"(final accuracy {report73['final_accuracy']:.4f})")
