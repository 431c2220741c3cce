import numpy as np
import pytest

from prunekit.data import synthetic_dataset
from prunekit.model_ir import ArchBuilder, builtin_arch, tensor_name
from prunekit.trainer import LrSchedule, TrainConfig, train


def make_two_conv(width1=8, width2=8, spatial=16):
    """Pure two-conv chain (no classifier head), both blocks prunable."""
    b = ArchBuilder("two_conv", (3, spatial, spatial), 2, seed=0)
    b.conv_block("c1", width1)
    b.conv_block("c2", width2)
    return b.build()


def make_wide_net(seed=0):
    """Wider tiny chain whose channel quantization is fine enough to land
    within 1% of a 50% FLOPs budget; used by pipeline integration tests."""
    b = ArchBuilder("wide4", (3, 8, 8), 4, seed=seed)
    for i, width in enumerate((24, 48, 48, 96), start=1):
        b.conv_block(f"b{i}", width)
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


def with_random_gammas(s, seed, lo=0.05, hi=1.0):
    """Copy of the snapshot with fresh uniform gammas on every prunable BN."""
    rng = np.random.default_rng(seed)
    weights = dict(s.weights)
    for blk in s.prunable_blocks():
        for bn in blk.prunable_bn_ids:
            name = tensor_name(bn, "gamma")
            weights[name] = rng.uniform(lo, hi, size=weights[name].shape).astype(np.float32)
    return s.with_weights(weights)


def random_snapshot(seed):
    """Randomized small architecture for property tests."""
    rng = np.random.default_rng(seed)
    spatial = int(rng.integers(8, 17))
    classes = int(rng.integers(2, 6))
    b = ArchBuilder(f"rand{seed}", (3, spatial, spatial), classes, seed=seed)
    n_blocks = int(rng.integers(2, 5))
    kind_choices = ["plain", "residual", "inverted_residual"]
    width = int(rng.integers(4, 13))
    b.conv_block("stem", width, prunable=False)
    out_prunable = False
    for i in range(n_blocks):
        kind = kind_choices[int(rng.integers(0, len(kind_choices)))]
        if kind == "plain":
            width = int(rng.integers(4, 13))
            b.conv_block(f"blk{i}", width)
            out_prunable = True
        else:
            if out_prunable:
                # a shortcut block cannot follow a prunable-output block
                width = int(rng.integers(4, 13))
                b.conv_block(f"pre{i}", width, prunable=False)
                out_prunable = False
            if kind == "residual":
                b.residual_block(f"blk{i}")
            else:
                b.inverted_residual_block(f"blk{i}", expansion=int(rng.integers(2, 4)))
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return with_random_gammas(b.build(), seed + 1)


@pytest.fixture
def tiny_vgg():
    return builtin_arch("tiny_vgg", 4, (3, 16, 16), seed=0)


@pytest.fixture
def two_conv():
    return make_two_conv()


@pytest.fixture(scope="session")
def synth_data():
    return synthetic_dataset(num_classes=4, n_per_class=250, shape=(3, 16, 16),
                             noise=0.05, seed=7)


FIXTURE_TRAIN_CFG = TrainConfig(
    epochs=12, batch_size=32,
    lr=LrSchedule(kind="step", initial=0.05, drop_every=8, factor=0.1),
    momentum=0.9, weight_decay=5e-3, sparsity=1e-4, seed=3, mode="sparse",
)


@pytest.fixture(scope="session")
def trained_tiny(synth_data):
    """Sparse-trained tiny_vgg on the synthetic set; shared across test files."""
    train_slice, val_slice = synth_data
    base = builtin_arch("tiny_vgg", 4, (3, 16, 16), seed=0)
    snap, history = train(base, train_slice, FIXTURE_TRAIN_CFG)
    return snap, history, train_slice, val_slice
