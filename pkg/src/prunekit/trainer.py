"""SGD training loops: sparsity-inducing training and fine-tuning.

Sparse mode adds an L1 penalty on the gamma parameters of every prunable
BN layer; its subgradient (defined as 0 at 0) is added to the gamma
gradients each step. Weight decay applies to conv/fc tensors only, never
to BN parameters, so the L1 coefficient alone governs gamma shrinkage.
Runs are fully deterministic given the config seed: batch order comes
from one seeded generator, and parameter updates are plain numpy math.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .data import batches
from .errors import TrainingDiverged
from .model_ir import ModelSnapshot, tensor_name

DEFAULT_EPOCHS = 150
DEFAULT_BATCH = 256


@dataclass
class LrSchedule:
    kind: str = "step"          # "step" or "cosine"
    initial: float = 0.01
    drop_every: int = 50
    factor: float = 0.1

    def at(self, epoch, total_epochs):
        if self.kind == "step":
            return self.initial * self.factor ** (epoch // self.drop_every)
        if self.kind == "cosine":
            if total_epochs <= 1:
                return self.initial
            return self.initial * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))
        raise ValueError(f"unknown lr schedule {self.kind!r}")


@dataclass
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH
    lr: LrSchedule = field(default_factory=LrSchedule)
    momentum: float = 0.9
    weight_decay: float = 5e-3
    sparsity: float = 1e-4      # L1 coefficient on prunable BN gammas
    seed: int = 0
    mode: str = "sparse"        # "sparse" or "finetune"
    augment: bool = False

    def validate(self):
        if self.mode not in ("sparse", "finetune"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sparsity < 0:
            raise ValueError("sparsity must be >= 0")
        if self.lr.initial <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")

    def to_json(self):
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "lr": {"kind": self.lr.kind, "initial": self.lr.initial,
                   "drop_every": self.lr.drop_every, "factor": self.lr.factor},
            "momentum": self.momentum, "weight_decay": self.weight_decay,
            "sparsity": self.sparsity, "seed": self.seed, "mode": self.mode,
            "augment": self.augment,
        }

    @staticmethod
    def from_json(d):
        lr = d.get("lr", {})
        return TrainConfig(
            epochs=int(d.get("epochs", DEFAULT_EPOCHS)),
            batch_size=int(d.get("batch_size", DEFAULT_BATCH)),
            lr=LrSchedule(
                kind=str(lr.get("kind", "step")), initial=float(lr.get("initial", 0.01)),
                drop_every=int(lr.get("drop_every", 50)), factor=float(lr.get("factor", 0.1))),
            momentum=float(d.get("momentum", 0.9)),
            weight_decay=float(d.get("weight_decay", 5e-3)),
            sparsity=float(d.get("sparsity", 1e-4)),
            seed=int(d.get("seed", 0)),
            mode=str(d.get("mode", "sparse")),
            augment=bool(d.get("augment", False)),
        )


def cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    logits = np.asarray(logits)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def loss(logits, labels, gammas, lam):
    """Classification loss plus L1 penalty on the given gamma vectors."""
    ce, _ = cross_entropy(logits, labels)
    penalty = 0.0
    if lam:
        penalty = lam * float(sum(np.abs(g).sum() for g in gammas))
    return ce + penalty


def _prunable_gamma_names(s: ModelSnapshot):
    names = []
    for b in s.prunable_blocks():
        for bn in b.prunable_bn_ids:
            names.append(tensor_name(bn, "gamma"))
    return names


def _block_gamma_means(s, params):
    out = {}
    for b in s.prunable_blocks():
        vals = [np.abs(params[tensor_name(bn, "gamma")]) for bn in b.prunable_bn_ids]
        out[b.id] = float(np.concatenate(vals).mean())
    return out


def train(s: ModelSnapshot, data, cfg: TrainConfig):
    """Train a copy of the snapshot; returns (new snapshot, per-epoch metrics)."""
    cfg.validate()
    params = {name: arr.copy() for name, arr in s.weights.items()}
    trainables = engine.trainable_names(s)
    velocity = {name: np.zeros_like(params[name]) for name in trainables}
    gamma_names = set(_prunable_gamma_names(s))
    lam = cfg.sparsity if cfg.mode == "sparse" else 0.0
    decay_names = {n for n in trainables if n.endswith(".w") or n.endswith(".b")}

    rng = np.random.default_rng(cfg.seed)
    snap = s.with_weights(params)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr.at(epoch, cfg.epochs)
        total_loss = 0.0
        total_correct = 0
        total_seen = 0
        shuffle_seed = int(rng.integers(0, 2**31 - 1))
        for imgs, labels in batches(data, cfg.batch_size, shuffle_seed=shuffle_seed,
                                    augment=cfg.augment):
            logits, cache = engine.forward(snap, imgs, mode="train", params=params)
            ce, grad_logits = cross_entropy(logits, labels)
            step_loss = ce
            if lam:
                step_loss += lam * float(sum(np.abs(params[g]).sum() for g in gamma_names))
            if not np.isfinite(step_loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
            grads = engine.backward(cache, grad_logits)
            if lam:
                for g in gamma_names:
                    grads[g] = grads[g] + lam * np.sign(params[g])
            for name in trainables:
                grad = grads.get(name)
                if grad is None:
                    continue
                if cfg.weight_decay and name in decay_names:
                    grad = grad + cfg.weight_decay * params[name]
                v = velocity[name]
                v *= cfg.momentum
                v += grad
                params[name] -= lr * v
            for name, val in cache["bn_updates"].items():
                params[name] = val
            total_loss += step_loss * len(labels)
            total_correct += int((logits.argmax(axis=1) == labels).sum())
            total_seen += len(labels)
        gamma_means = _block_gamma_means(s, params)
        history.append({
            "epoch": epoch, "lr": lr,
            "loss": total_loss / max(total_seen, 1),
            "accuracy": total_correct / max(total_seen, 1),
            "mean_abs_gamma": gamma_means,
            "global_mean_abs_gamma": float(np.mean(list(gamma_means.values()))) if gamma_means else 0.0,
        })
    return snap.with_weights(params), history
