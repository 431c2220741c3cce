import numpy as np
import pytest

from prunekit.cost import ChannelConfig, baseline_cost, evaluate_cost, identity_config
from prunekit.errors import CostError
from prunekit.model_ir import FORMAT_VERSION, ArchBuilder, ModelSnapshot, builtin_arch

from conftest import random_snapshot
from oracles import mac_loop_count, mac_loop_count_layer


def test_single_conv_flops_against_nested_loops():
    # 3 -> 16 channels, 3x3 kernel, padded to keep 32x32 output
    b = ArchBuilder("one_conv", (3, 32, 32), 2, seed=0)
    b.conv_block("c1", 16)
    s = b.build()
    rep = baseline_cost(s)
    assert rep.per_layer["c1.conv"][0] == 442368
    assert rep.per_layer["c1.conv"][0] == mac_loop_count_layer("conv", 3, 16, (3, 3), (32, 32))


def test_single_mac_conv():
    b = ArchBuilder("single", (1, 1, 1), 2, seed=0)
    b.begin_block("c", "plain")
    b.conv("c.conv", 1, kernel=1, padding=0)
    b.end_block()
    s = b.build()
    assert baseline_cost(s).flops == 1


@pytest.mark.parametrize("name,shape,classes", [
    ("tiny_vgg", (3, 16, 16), 4),
    ("tiny_resnet", (3, 16, 16), 4),
    ("tiny_ir", (3, 16, 16), 4),
])
def test_baseline_matches_loop_oracle(name, shape, classes):
    s = builtin_arch(name, classes, shape, seed=0)
    assert baseline_cost(s).flops == mac_loop_count(s)


def test_tiny_vgg_baseline_constant(tiny_vgg):
    assert baseline_cost(tiny_vgg).flops == 2119808


def test_vgg16_baseline_constant_and_oracle():
    s = builtin_arch("vgg16", 10, (3, 32, 32), seed=0)
    flops = baseline_cost(s).flops
    assert flops == 313201664
    assert flops == mac_loop_count(s)


def test_halved_channels_quarter_cost_on_conv_chain(two_conv):
    cfg = ChannelConfig({"c1.conv": 4, "c2.conv": 4})
    rep = evaluate_cost(two_conv, cfg)
    base = baseline_cost(two_conv)
    # first conv input is fixed at 3 channels -> cost halves; the internal
    # conv scales on both sides -> cost quarters
    assert rep.per_layer["c1.conv"][0] * 2 == base.per_layer["c1.conv"][0]
    assert rep.per_layer["c2.conv"][0] * 4 == base.per_layer["c2.conv"][0]
    assert rep.flops == mac_loop_count(two_conv, cfg.channels)


def test_pruned_config_matches_loop_oracle():
    s = builtin_arch("tiny_ir", 4, (3, 16, 16), seed=0)
    cfg = dict(identity_config(s).channels)
    cfg["ir1.expand"] = 7
    cfg["ir1.dw"] = 7
    cfg["ir2.expand"] = 3
    cfg["ir2.dw"] = 3
    rep = evaluate_cost(s, ChannelConfig(cfg))
    assert rep.flops == mac_loop_count(s, cfg)


def test_empty_model_zero_cost():
    s = ModelSnapshot(FORMAT_VERSION, "empty", (3, 4, 4), 2, (), {}, {})
    assert baseline_cost(s).flops == 0
    assert baseline_cost(s).params == 0


def test_totals_equal_per_layer_sums():
    for seed in range(10):
        s = random_snapshot(seed)
        rng = np.random.default_rng(seed)
        cfg = {}
        for b in s.prunable_blocks():
            for lid in b.internal_prunable_layer_ids:
                c = s.layers[lid].out_channels
                cfg[lid] = int(rng.integers(1, c + 1))
        # propagate depthwise counts
        from prunekit.planner import ratios_to_config
        full = ratios_to_config(s, {b.id: 1.0 for b in s.prunable_blocks()})
        merged = dict(full.channels)
        merged.update(cfg)
        for lid in s.chain():
            if s.layers[lid].kind == "depthwise_conv":
                prev = [p for p in s.chain()[:s.chain().index(lid)] if p in merged]
                merged[lid] = merged[prev[-1]]
        rep = evaluate_cost(s, ChannelConfig(merged))
        assert rep.flops == sum(f for f, _ in rep.per_layer.values())
        assert rep.params == sum(p for _, p in rep.per_layer.values())


def test_monotone_in_single_channel_increment():
    for seed in range(20):
        s = random_snapshot(seed)
        rng = np.random.default_rng(seed + 100)
        from prunekit.planner import ratios_to_config
        ratios = {b.id: float(rng.uniform(0.2, 0.9)) for b in s.prunable_blocks()}
        cfg = ratios_to_config(s, ratios)
        base = evaluate_cost(s, cfg).flops
        for b in s.prunable_blocks():
            for lid in b.internal_prunable_layer_ids:
                if cfg.channels[lid] < s.layers[lid].out_channels:
                    bumped = dict(cfg.channels)
                    bumped[lid] += 1
                    for did in s.chain():
                        if s.layers[did].kind == "depthwise_conv":
                            prev = [p for p in s.chain()[:s.chain().index(did)] if p in bumped]
                            bumped[did] = bumped[prev[-1]]
                    assert evaluate_cost(s, ChannelConfig(bumped)).flops >= base


def test_unknown_layer_in_config(two_conv):
    with pytest.raises(CostError, match="unknown layer"):
        evaluate_cost(two_conv, ChannelConfig({"nope": 3}))


def test_zero_channels_rejected(two_conv):
    with pytest.raises(CostError, match="zero or negative"):
        evaluate_cost(two_conv, ChannelConfig({"c1.conv": 0}))


def test_exceeding_original_rejected(two_conv):
    with pytest.raises(CostError, match="exceeds original"):
        evaluate_cost(two_conv, ChannelConfig({"c1.conv": 99}))


def test_nonprunable_must_keep_width(tiny_vgg):
    with pytest.raises(CostError, match="not prunable"):
        evaluate_cost(tiny_vgg, ChannelConfig({"head.fc": 2}))


def test_spatial_map_recorded(tiny_vgg):
    rep = baseline_cost(tiny_vgg)
    assert rep.spatial["b1.conv"] == (16, 16)
    assert rep.spatial["pool.pool"] == (1, 1)
    assert rep.spatial["head.fc"] == (1, 1)
