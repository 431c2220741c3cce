"""FLOPs and parameter counting under arbitrary channel configurations.

FLOPs are multiply-accumulate counts (1 MAC = 1 FLOP): conv costs
``c_in * c_out * kH * kW * H_out * W_out``, depthwise conv costs
``c * kH * kW * H_out * W_out`` and a fully-connected layer costs
``in * out``. Bias adds, BN, activations and pooling are counted as zero,
the usual convention in the pruning literature; relative budgets do not
depend on the choice. Parameters are counted analogously (weight matrix
elements only). All arithmetic is exact integer math.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import CostError
from .model_ir import CHANNEL_KINDS, ModelSnapshot, shape_map


@dataclass(frozen=True)
class ChannelConfig:
    """Per-layer output channel counts; covers conv/depthwise/fc layers."""

    channels: dict

    def get(self, lid, default=None):
        return self.channels.get(lid, default)


@dataclass
class CostReport:
    flops: int
    params: int
    per_layer: dict = field(default_factory=dict)
    spatial: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "flops": self.flops,
            "params": self.params,
            "per_layer": {k: {"flops": f, "params": p} for k, (f, p) in self.per_layer.items()},
            "spatial": {k: list(v) for k, v in self.spatial.items()},
        }


def identity_config(s: ModelSnapshot) -> ChannelConfig:
    """The configuration that keeps every layer at its original width."""
    return ChannelConfig({
        lid: lyr.out_channels for lid, lyr in s.layers.items() if lyr.kind in CHANNEL_KINDS
    })


def _validate_config(s: ModelSnapshot, cfg: ChannelConfig):
    for lid, c in cfg.channels.items():
        lyr = s.layers.get(lid)
        if lyr is None:
            raise CostError(f"config references unknown layer {lid!r}")
        if lyr.kind not in CHANNEL_KINDS:
            raise CostError(f"config entry for {lid!r}: kind {lyr.kind} has no channel decision")
        if c < 1:
            raise CostError(f"config entry for {lid!r}: zero or negative channels ({c})")
        if c > lyr.out_channels:
            raise CostError(f"config entry for {lid!r}: {c} exceeds original {lyr.out_channels}")
        if not lyr.prunable and c != lyr.out_channels:
            raise CostError(f"config entry for {lid!r}: layer is not prunable, must stay {lyr.out_channels}")


def evaluate_cost(s: ModelSnapshot, cfg: ChannelConfig) -> CostReport:
    """Cost of the snapshot with layer widths overridden by ``cfg``."""
    _validate_config(s, cfg)
    shapes = shape_map(s, cfg.channels)
    per_layer = {}
    spatial = {}
    total_flops = 0
    total_params = 0
    for lid in s.chain():
        lyr = s.layers[lid]
        cin, cout, h, w = shapes[lid]
        flops = params = 0
        if lyr.kind == "conv":
            kh, kw = lyr.kernel
            params = cin * cout * kh * kw
            flops = params * h * w
        elif lyr.kind == "depthwise_conv":
            kh, kw = lyr.kernel
            params = cout * kh * kw
            flops = params * h * w
        elif lyr.kind == "fully_connected":
            params = cin * cout
            flops = params
        per_layer[lid] = (flops, params)
        spatial[lid] = (h, w)
        total_flops += flops
        total_params += params
    return CostReport(total_flops, total_params, per_layer, spatial)


def baseline_cost(s: ModelSnapshot) -> CostReport:
    """Cost at the original channel counts."""
    return evaluate_cost(s, identity_config(s))
