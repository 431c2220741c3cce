"""Framework-neutral network representation and its on-disk snapshot format.

A model is a single chain of layers, partitioned into ordered blocks.
Residual-style blocks add one side edge: the activation entering the
block's first layer is stashed and re-added by the block's ``add_residual``
layer. This covers plain conv stacks, basic residual blocks, and inverted
residual (expand / depthwise / project) blocks without general graph
machinery.

On disk a snapshot is two files:

* a JSON manifest (architecture, blocks, layers, tensor directory) and
* a raw blob of little-endian float32 tensors, concatenated row-major,
  4-byte aligned, in the order declared by the manifest's tensor records.

See ``FORMAT.md`` at the repository root for the authoritative schema
shared with external exporters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ManifestError, ValidationError

FORMAT_VERSION = 1

LAYER_KINDS = frozenset({
    "conv", "depthwise_conv", "batch_norm", "relu", "relu6",
    "max_pool", "avg_pool", "global_avg_pool", "fully_connected",
    "add_residual", "flatten",
})
BLOCK_KINDS = frozenset({"plain", "residual", "inverted_residual"})

# Layers that own an out_channels decision; everything else passes its
# producer's channel count through.
CHANNEL_KINDS = frozenset({"conv", "depthwise_conv", "fully_connected"})
KERNEL_KINDS = frozenset({"conv", "depthwise_conv", "max_pool", "avg_pool"})

# Tensor roles per layer kind, in canonical blob order.
_ROLES = {
    "conv": ("w", "b"),
    "depthwise_conv": ("w", "b"),
    "fully_connected": ("w", "b"),
    "batch_norm": ("gamma", "beta", "mean", "var"),
}


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    has_bias: bool = False
    prunable: bool = False


@dataclass(frozen=True)
class BlockSpec:
    id: str
    kind: str
    layer_ids: tuple
    prunable_bn_ids: tuple = ()
    internal_prunable_layer_ids: tuple = ()


@dataclass
class ModelSnapshot:
    """Architecture manifest plus weight store; immutable by convention."""

    format_version: int
    arch_name: str
    input_shape: tuple
    num_classes: int
    blocks: tuple
    layers: dict
    weights: dict = field(default_factory=dict)

    def chain(self):
        """Layer ids in execution order (concatenation of block chains)."""
        out = []
        for b in self.blocks:
            out.extend(b.layer_ids)
        return out

    def layer(self, lid):
        return self.layers[lid]

    def block_of(self, lid):
        for b in self.blocks:
            if lid in b.layer_ids:
                return b
        return None

    def prunable_blocks(self):
        return [b for b in self.blocks if b.internal_prunable_layer_ids]

    def with_weights(self, weights):
        return replace(self, weights=dict(weights))


def tensor_name(layer_id, role):
    return f"{layer_id}.{role}"


def layer_tensor_roles(layer: LayerSpec):
    """Roles of weight tensors this layer owns, in canonical order."""
    roles = _ROLES.get(layer.kind, ())
    if layer.kind in ("conv", "depthwise_conv", "fully_connected") and not layer.has_bias:
        roles = ("w",)
    return roles


def expected_tensor_shape(layer: LayerSpec, role):
    if layer.kind in ("conv", "depthwise_conv"):
        kh, kw = layer.kernel
        cin = 1 if layer.kind == "depthwise_conv" else layer.in_channels
        return {"w": (layer.out_channels, cin, kh, kw), "b": (layer.out_channels,)}[role]
    if layer.kind == "fully_connected":
        return {"w": (layer.out_channels, layer.in_channels), "b": (layer.out_channels,)}[role]
    if layer.kind == "batch_norm":
        return (layer.out_channels,)
    raise ValidationError(f"layer {layer.id}: kind {layer.kind} carries no tensors")


# ---------------------------------------------------------------------------
# shape propagation
# ---------------------------------------------------------------------------

def _window_out(lid, h, w, kernel, stride, padding):
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValidationError(f"layer {lid}: output spatial size collapsed to {ho}x{wo}")
    return ho, wo


def shape_map(s: ModelSnapshot, channels=None):
    """Propagate (channels, H, W) through the chain.

    ``channels`` optionally overrides out_channels per layer id (a plain
    dict, as produced by the planner). Returns ``{layer_id: (c_in, c_out,
    h_out, w_out)}``. For ``flatten``/``fully_connected`` the channel slot
    holds the feature count and spatial dims collapse to 1x1.
    """
    channels = channels or {}
    c, h, w = s.input_shape
    out = {}
    for b in s.blocks:
        block_in = (c, h, w) if b.kind in ("residual", "inverted_residual") else None
        for lid in b.layer_ids:
            lyr = s.layers[lid]
            cin = c
            if lyr.kind == "conv":
                h, w = _window_out(lid, h, w, lyr.kernel, lyr.stride, lyr.padding)
                c = channels.get(lid, lyr.out_channels)
            elif lyr.kind == "depthwise_conv":
                h, w = _window_out(lid, h, w, lyr.kernel, lyr.stride, lyr.padding)
                c = channels.get(lid, cin)
                if c != cin:
                    raise ValidationError(f"layer {lid}: depthwise channel count {c} != input {cin}")
            elif lyr.kind in ("max_pool", "avg_pool"):
                h, w = _window_out(lid, h, w, lyr.kernel, lyr.stride, lyr.padding)
            elif lyr.kind == "global_avg_pool":
                h = w = 1
            elif lyr.kind == "flatten":
                c, h, w = c * h * w, 1, 1
            elif lyr.kind == "fully_connected":
                if channels.get(lid, lyr.out_channels) != lyr.out_channels:
                    raise ValidationError(f"layer {lid}: fully_connected output is not prunable")
                c = lyr.out_channels
            elif lyr.kind == "add_residual":
                if block_in is None or (c, h, w) != block_in:
                    raise ValidationError(
                        f"layer {lid}: residual add shape ({c},{h},{w}) != block input {block_in}")
            # batch_norm / relu / relu6 pass through
            out[lid] = (cin, c, h, w)
    return out


def producer_map(s: ModelSnapshot):
    """For each layer, the id of the preceding layer in the chain (or None)."""
    chain = s.chain()
    return {lid: (chain[i - 1] if i else None) for i, lid in enumerate(chain)}


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_snapshot(s: ModelSnapshot):
    """Check every structural invariant; raise ValidationError with the offending id."""
    if not isinstance(s.format_version, int) or s.format_version < 1:
        raise ValidationError(f"unsupported format_version {s.format_version!r}")
    if len(s.input_shape) != 3 or any(int(d) < 1 for d in s.input_shape):
        raise ValidationError(f"bad input_shape {s.input_shape!r}")
    if s.num_classes < 1:
        raise ValidationError(f"bad num_classes {s.num_classes!r}")

    seen = set()
    for b in s.blocks:
        if b.kind not in BLOCK_KINDS:
            raise ValidationError(f"block {b.id}: unknown kind {b.kind!r}")
        for lid in b.layer_ids:
            if lid not in s.layers:
                raise ValidationError(f"block {b.id}: dangling layer id {lid!r}")
            if lid in seen:
                raise ValidationError(f"layer {lid}: appears in more than one block")
            seen.add(lid)
    for lid in s.layers:
        if lid not in seen:
            raise ValidationError(f"layer {lid}: not assigned to any block")

    for lid, lyr in s.layers.items():
        if lyr.id != lid:
            raise ValidationError(f"layer {lid}: id field mismatch ({lyr.id!r})")
        if lyr.kind not in LAYER_KINDS:
            raise ValidationError(f"layer {lid}: unknown kind {lyr.kind!r}")
        if lyr.kind in CHANNEL_KINDS or lyr.kind == "batch_norm":
            if lyr.in_channels < 1 or lyr.out_channels < 1:
                raise ValidationError(f"layer {lid}: channel counts must be >= 1")
        if lyr.kind in KERNEL_KINDS:
            if min(lyr.kernel) < 1 or min(lyr.stride) < 1:
                raise ValidationError(f"layer {lid}: kernel/stride dims must be >= 1")
            if min(lyr.padding) < 0:
                raise ValidationError(f"layer {lid}: negative padding")
        if lyr.kind == "depthwise_conv" and lyr.in_channels != lyr.out_channels:
            raise ValidationError(f"layer {lid}: depthwise_conv needs out_channels == in_channels")
        if lyr.kind == "batch_norm" and lyr.in_channels != lyr.out_channels:
            raise ValidationError(f"layer {lid}: batch_norm cannot change channel count")
        if lyr.kind == "add_residual":
            for role in ("w", "b", "gamma"):
                if tensor_name(lid, role) in s.weights:
                    raise ValidationError(f"layer {lid}: add_residual carries no weights")

    for b in s.blocks:
        adds = [lid for lid in b.layer_ids if s.layers[lid].kind == "add_residual"]
        if b.kind in ("residual", "inverted_residual"):
            if len(adds) != 1:
                raise ValidationError(f"block {b.id}: {b.kind} block needs exactly one add_residual")
        elif adds:
            raise ValidationError(f"block {b.id}: plain block cannot contain add_residual")
        for bn in b.prunable_bn_ids:
            if bn not in b.layer_ids or s.layers[bn].kind != "batch_norm":
                raise ValidationError(f"block {b.id}: prunable_bn_id {bn!r} is not a batch_norm inside the block")
        for lid in b.internal_prunable_layer_ids:
            if lid not in b.layer_ids or s.layers[lid].kind not in ("conv", "fully_connected"):
                raise ValidationError(f"block {b.id}: internal prunable layer {lid!r} invalid")
        if b.internal_prunable_layer_ids and not b.prunable_bn_ids:
            raise ValidationError(f"block {b.id}: prunable block without prunable BN")
        if b.kind in ("residual", "inverted_residual"):
            # Output channels are tied to the shortcut; the layer producing the
            # block output must stay untouched.
            chan_layers = [lid for lid in b.layer_ids if s.layers[lid].kind in CHANNEL_KINDS]
            if chan_layers and chan_layers[-1] in b.internal_prunable_layer_ids:
                raise ValidationError(f"block {b.id}: block output layer {chan_layers[-1]!r} cannot be prunable")

    # A residual-kind block's input width is pinned by its shortcut, so the
    # channel layer feeding the block cannot be prunable either.
    prunable_ids = {lid for b in s.blocks for lid in b.internal_prunable_layer_ids}
    chain = s.chain()
    for b in s.blocks:
        if b.kind in ("residual", "inverted_residual") and b.layer_ids:
            idx = chain.index(b.layer_ids[0])
            producer = next((lid for lid in reversed(chain[:idx])
                             if s.layers[lid].kind in CHANNEL_KINDS), None)
            if producer is not None and producer in prunable_ids:
                raise ValidationError(
                    f"block {b.id}: producer {producer!r} feeds a shortcut and cannot be prunable")

    # Chain consistency (channel/spatial propagation raises on mismatch) and
    # tensor presence/shape checks.
    shapes = shape_map(s)
    for lid in s.chain():
        lyr = s.layers[lid]
        cin, cout = shapes[lid][0], shapes[lid][1]
        if lyr.kind in CHANNEL_KINDS or lyr.kind == "batch_norm":
            if lyr.in_channels != cin:
                raise ValidationError(f"layer {lid}: in_channels {lyr.in_channels} != incoming {cin}")
        if lyr.kind == "flatten" and lyr.out_channels != cout:
            raise ValidationError(f"layer {lid}: flatten features {lyr.out_channels} != {cout}")

    declared = set()
    for lid in s.chain():
        lyr = s.layers[lid]
        for role in layer_tensor_roles(lyr):
            name = tensor_name(lid, role)
            declared.add(name)
            arr = s.weights.get(name)
            if arr is None:
                raise ValidationError(f"layer {lid}: missing tensor {name!r}")
            want = expected_tensor_shape(lyr, role)
            if tuple(arr.shape) != tuple(want):
                raise ValidationError(f"tensor {name}: shape {tuple(arr.shape)} != expected {want}")
            if arr.dtype != np.float32:
                raise ValidationError(f"tensor {name}: dtype {arr.dtype} != float32")
        if lyr.kind == "batch_norm":
            if not np.all(s.weights[tensor_name(lid, "var")] > 0):
                raise ValidationError(f"layer {lid}: running_var has non-positive entries")
    for name in s.weights:
        if name not in declared:
            raise ValidationError(f"tensor {name}: not owned by any layer")
    return s


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _layer_to_json(lyr: LayerSpec):
    return {
        "id": lyr.id, "kind": lyr.kind,
        "in_channels": lyr.in_channels, "out_channels": lyr.out_channels,
        "kernel": list(lyr.kernel), "stride": list(lyr.stride), "padding": list(lyr.padding),
        "has_bias": lyr.has_bias, "prunable": lyr.prunable,
    }


def _pair(d, key, default):
    val = d.get(key, default)
    pair = tuple(int(x) for x in val)
    if len(pair) != 2:
        raise ValueError(f"{key} must have exactly 2 entries, got {val!r}")
    return pair


def _layer_from_json(d):
    try:
        return LayerSpec(
            id=str(d["id"]), kind=str(d["kind"]),
            in_channels=int(d.get("in_channels", 0)), out_channels=int(d.get("out_channels", 0)),
            kernel=_pair(d, "kernel", (1, 1)),
            stride=_pair(d, "stride", (1, 1)),
            padding=_pair(d, "padding", (0, 0)),
            has_bias=bool(d.get("has_bias", False)), prunable=bool(d.get("prunable", False)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"bad layer entry {d!r}: {e}") from None


def save_snapshot(s: ModelSnapshot, manifest_path, blob_path):
    """Write manifest + blob. Tensors are packed in chain order, canonical roles."""
    validate_snapshot(s)
    records = []
    offset = 0
    chunks = []
    for lid in s.chain():
        lyr = s.layers[lid]
        for role in layer_tensor_roles(lyr):
            name = tensor_name(lid, role)
            arr = np.ascontiguousarray(s.weights[name], dtype=np.float32)
            raw = arr.tobytes()
            records.append({
                "name": name, "dtype": "f32", "shape": list(arr.shape),
                "byte_offset": offset, "byte_length": len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "format_version": s.format_version,
        "arch_name": s.arch_name,
        "input_shape": list(s.input_shape),
        "num_classes": s.num_classes,
        "blocks": [{
            "id": b.id, "kind": b.kind, "layer_ids": list(b.layer_ids),
            "prunable_bn_ids": list(b.prunable_bn_ids),
            "internal_prunable_layer_ids": list(b.internal_prunable_layer_ids),
        } for b in s.blocks],
        "layers": {lid: _layer_to_json(lyr) for lid, lyr in s.layers.items()},
        "tensors": records,
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)
    with open(blob_path, "wb") as f:
        f.write(b"".join(chunks))


def load_snapshot(manifest_path, blob_path) -> ModelSnapshot:
    """Parse and fully validate a manifest + blob pair."""
    try:
        with open(manifest_path) as f:
            m = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot parse manifest {manifest_path}: {e}") from None
    if not isinstance(m, dict):
        raise ManifestError("manifest root must be an object")
    if not isinstance(m.get("blocks", []), list):
        raise ManifestError("manifest 'blocks' must be a list")
    if not isinstance(m.get("layers", {}), dict):
        raise ManifestError("manifest 'layers' must be an object")
    if not isinstance(m.get("tensors", []), list):
        raise ManifestError("manifest 'tensors' must be a list")
    try:
        blocks = tuple(BlockSpec(
            id=str(b["id"]), kind=str(b["kind"]),
            layer_ids=tuple(str(x) for x in b["layer_ids"]),
            prunable_bn_ids=tuple(str(x) for x in b.get("prunable_bn_ids", ())),
            internal_prunable_layer_ids=tuple(str(x) for x in b.get("internal_prunable_layer_ids", ())),
        ) for b in m.get("blocks", ()))
        layers = {str(k): _layer_from_json(v) for k, v in m.get("layers", {}).items()}
        records = m.get("tensors", [])
        snap = ModelSnapshot(
            format_version=int(m.get("format_version", -1)),
            arch_name=str(m.get("arch_name", "")),
            input_shape=tuple(int(x) for x in m.get("input_shape", ())),
            num_classes=int(m.get("num_classes", 0)),
            blocks=blocks, layers=layers,
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ManifestError(f"malformed manifest: {e}") from None
    if snap.format_version != FORMAT_VERSION:
        raise ManifestError(f"unsupported format_version {snap.format_version}")

    try:
        with open(blob_path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise ManifestError(f"cannot read blob {blob_path}: {e}") from None

    weights = {}
    spans = []
    for rec in records:
        if not isinstance(rec, dict):
            raise ManifestError(f"bad tensor record {rec!r}")
        try:
            name = str(rec["name"])
            shape = tuple(int(x) for x in rec["shape"])
            off = int(rec["byte_offset"])
            length = int(rec["byte_length"])
            dtype = str(rec.get("dtype", "f32"))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad tensor record {rec!r}: {e}") from None
        if dtype != "f32":
            raise ManifestError(f"tensor {name}: unsupported dtype {dtype!r}")
        want = 4 * int(np.prod(shape, dtype=np.int64))
        if length != want:
            raise ManifestError(f"tensor {name}: shape/offset mismatch (byte_length {length} != 4*prod{shape})")
        if off % 4 != 0 or off < 0:
            raise ManifestError(f"tensor {name}: byte_offset {off} not 4-byte aligned")
        if off + length > len(blob):
            raise ManifestError(f"tensor {name}: record extends past end of blob")
        for (o2, l2, n2) in spans:
            if off < o2 + l2 and o2 < off + length:
                raise ManifestError(f"tensor {name}: overlaps record {n2}")
        spans.append((off, length, name))
        if name in weights:
            raise ManifestError(f"tensor {name}: duplicate record")
        weights[name] = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=off).reshape(shape).copy()
    snap.weights = weights
    try:
        validate_snapshot(snap)
    except ValidationError:
        raise
    return snap


# ---------------------------------------------------------------------------
# builders and builtin architectures
# ---------------------------------------------------------------------------

class ArchBuilder:
    """Incrementally assemble a snapshot; used by builtins and test fixtures."""

    def __init__(self, arch_name, input_shape, num_classes, seed=0):
        self.arch_name = arch_name
        self.input_shape = tuple(int(x) for x in input_shape)
        self.num_classes = int(num_classes)
        self.rng = np.random.default_rng(seed)
        self.layers = {}
        self.blocks = []
        self.weights = {}
        self._cur = None          # (block_id, kind, layer_ids, bn_ids, prunable_ids)
        self._channels = self.input_shape[0]

    # -- low-level ---------------------------------------------------------

    def begin_block(self, bid, kind="plain"):
        assert self._cur is None, "previous block not closed"
        self._cur = (bid, kind, [], [], [])
        return self

    def end_block(self):
        bid, kind, lids, bns, prunables = self._cur
        self.blocks.append(BlockSpec(bid, kind, tuple(lids), tuple(bns), tuple(prunables)))
        self._cur = None
        return self

    def _add(self, lyr: LayerSpec):
        self.layers[lyr.id] = lyr
        self._cur[2].append(lyr.id)

    def _kaiming(self, shape, fan_in):
        bound = float(np.sqrt(6.0 / fan_in))
        return self.rng.uniform(-bound, bound, size=shape).astype(np.float32)

    def conv(self, lid, out_ch, kernel=3, stride=1, padding=None, prunable=False, bias=False):
        k = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        if padding is None:
            padding = (k[0] // 2, k[1] // 2)
        p = (padding, padding) if np.isscalar(padding) else tuple(padding)
        st = (stride, stride) if np.isscalar(stride) else tuple(stride)
        cin = self._channels
        self._add(LayerSpec(lid, "conv", cin, out_ch, k, st, p, bias, prunable))
        self.weights[f"{lid}.w"] = self._kaiming((out_ch, cin, k[0], k[1]), cin * k[0] * k[1])
        if bias:
            self.weights[f"{lid}.b"] = np.zeros(out_ch, dtype=np.float32)
        if prunable:
            self._cur[4].append(lid)
        self._channels = out_ch
        return lid

    def depthwise(self, lid, kernel=3, stride=1, padding=None, prunable=False):
        k = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        if padding is None:
            padding = (k[0] // 2, k[1] // 2)
        p = (padding, padding) if np.isscalar(padding) else tuple(padding)
        st = (stride, stride) if np.isscalar(stride) else tuple(stride)
        c = self._channels
        self._add(LayerSpec(lid, "depthwise_conv", c, c, k, st, p, False, prunable))
        self.weights[f"{lid}.w"] = self._kaiming((c, 1, k[0], k[1]), k[0] * k[1])
        return lid

    def bn(self, lid, prunable_gamma=False):
        c = self._channels
        self._add(LayerSpec(lid, "batch_norm", c, c))
        self.weights[f"{lid}.gamma"] = np.ones(c, dtype=np.float32)
        self.weights[f"{lid}.beta"] = np.zeros(c, dtype=np.float32)
        self.weights[f"{lid}.mean"] = np.zeros(c, dtype=np.float32)
        self.weights[f"{lid}.var"] = np.ones(c, dtype=np.float32)
        if prunable_gamma:
            self._cur[3].append(lid)
        return lid

    def act(self, lid, kind="relu"):
        c = self._channels
        self._add(LayerSpec(lid, kind, c, c))
        return lid

    def pool(self, lid, kind="max_pool", kernel=2, stride=None):
        if stride is None:
            stride = kernel
        c = self._channels
        self._add(LayerSpec(lid, kind, c, c, (kernel, kernel), (stride, stride), (0, 0)))
        return lid

    def global_pool(self, lid):
        c = self._channels
        self._add(LayerSpec(lid, "global_avg_pool", c, c))
        return lid

    def add_residual(self, lid):
        c = self._channels
        self._add(LayerSpec(lid, "add_residual", c, c))
        return lid

    def flatten(self, lid, features):
        self._add(LayerSpec(lid, "flatten", self._channels, features))
        self._channels = features
        return lid

    def fc(self, lid, out_features, bias=True):
        cin = self._channels
        self._add(LayerSpec(lid, "fully_connected", cin, out_features, has_bias=bias))
        self.weights[f"{lid}.w"] = self._kaiming((out_features, cin), cin)
        if bias:
            self.weights[f"{lid}.b"] = np.zeros(out_features, dtype=np.float32)
        self._channels = out_features
        return lid

    # -- composites ----------------------------------------------------------

    def conv_block(self, bid, out_ch, kernel=3, stride=1, act="relu", prunable=True):
        """conv + BN + activation as one (optionally prunable) block."""
        self.begin_block(bid, "plain")
        self.conv(f"{bid}.conv", out_ch, kernel, stride, prunable=prunable)
        self.bn(f"{bid}.bn", prunable_gamma=prunable)
        self.act(f"{bid}.act", act)
        self.end_block()
        return self

    def residual_block(self, bid, prunable=True):
        """Basic two-conv residual block at the current width."""
        width = self._channels
        self.begin_block(bid, "residual")
        self.conv(f"{bid}.conv1", width, 3, 1, prunable=prunable)
        self.bn(f"{bid}.bn1", prunable_gamma=prunable)
        self.act(f"{bid}.act1", "relu")
        self.conv(f"{bid}.conv2", width, 3, 1)
        self.bn(f"{bid}.bn2")
        self.add_residual(f"{bid}.add")
        self.act(f"{bid}.act2", "relu")
        self.end_block()
        return self

    def transition_block(self, bid, out_ch, stride=2, prunable=True):
        """Stage transition: two convs, no shortcut, first conv prunable."""
        self.begin_block(bid, "plain")
        self.conv(f"{bid}.conv1", out_ch, 3, stride, prunable=prunable)
        self.bn(f"{bid}.bn1", prunable_gamma=prunable)
        self.act(f"{bid}.act1", "relu")
        self.conv(f"{bid}.conv2", out_ch, 3, 1)
        self.bn(f"{bid}.bn2")
        self.act(f"{bid}.act2", "relu")
        self.end_block()
        return self

    def inverted_residual_block(self, bid, expansion=4, stride=1, out_ch=None, prunable=True):
        """Expand (1x1) / depthwise (3x3) / project (1x1) block.

        With stride 1 and unchanged width the block is residual; otherwise it
        is a plain transition and only the expanded channels are prunable.
        """
        width = self._channels
        out_ch = width if out_ch is None else out_ch
        residual = stride == 1 and out_ch == width
        self.begin_block(bid, "inverted_residual" if residual else "plain")
        hidden = width * expansion
        self.conv(f"{bid}.expand", hidden, 1, 1, padding=0, prunable=prunable)
        self.bn(f"{bid}.bn1", prunable_gamma=prunable)
        self.act(f"{bid}.act1", "relu6")
        self.depthwise(f"{bid}.dw", 3, stride, prunable=prunable)
        self.bn(f"{bid}.bn2", prunable_gamma=prunable)
        self.act(f"{bid}.act2", "relu6")
        self.conv(f"{bid}.project", out_ch, 1, 1, padding=0)
        self.bn(f"{bid}.bn3")
        if residual:
            self.add_residual(f"{bid}.add")
        self.end_block()
        return self

    def pool_block(self, bid, kind="max_pool", kernel=2):
        self.begin_block(bid, "plain")
        self.pool(f"{bid}.pool", kind, kernel)
        self.end_block()
        return self

    def global_pool_block(self, bid):
        self.begin_block(bid, "plain")
        self.global_pool(f"{bid}.pool")
        self.end_block()
        return self

    def classifier_block(self, bid, spatial):
        h, w = spatial
        feat = self._channels * h * w
        self.begin_block(bid, "plain")
        self.flatten(f"{bid}.flatten", feat)
        self.fc(f"{bid}.fc", self.num_classes)
        self.end_block()
        return self

    def build(self):
        snap = ModelSnapshot(
            format_version=FORMAT_VERSION, arch_name=self.arch_name,
            input_shape=self.input_shape, num_classes=self.num_classes,
            blocks=tuple(self.blocks), layers=self.layers, weights=self.weights,
        )
        return validate_snapshot(snap)


def _tiny_vgg(num_classes, input_shape, seed):
    b = ArchBuilder("tiny_vgg", input_shape, num_classes, seed)
    for i, width in enumerate((8, 16, 16, 32), start=1):
        b.conv_block(f"b{i}", width)
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


def _tiny_resnet(num_classes, input_shape, seed):
    b = ArchBuilder("tiny_resnet", input_shape, num_classes, seed)
    b.conv_block("stem", 8, prunable=False)
    b.residual_block("res1")
    b.residual_block("res2")
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


def _tiny_ir(num_classes, input_shape, seed):
    b = ArchBuilder("tiny_ir", input_shape, num_classes, seed)
    b.conv_block("stem", 8, act="relu6", prunable=False)
    b.inverted_residual_block("ir1", expansion=2)
    b.inverted_residual_block("ir2", expansion=2)
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


def _vgg16(num_classes, input_shape, seed):
    b = ArchBuilder("vgg16", input_shape, num_classes, seed)
    plan = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
    ci, pi = 0, 0
    for item in plan:
        if item == "M":
            pi += 1
            b.pool_block(f"pool{pi}")
        else:
            ci += 1
            b.conv_block(f"conv{ci}", item)
    h = input_shape[1] // (2 ** pi)
    w = input_shape[2] // (2 ** pi)
    b.classifier_block("head", (h, w))
    return b.build()


def _resnet56(num_classes, input_shape, seed):
    b = ArchBuilder("resnet56", input_shape, num_classes, seed)
    b.conv_block("stem", 16, prunable=False)
    for i in range(9):
        b.residual_block(f"s1.b{i}")
    b.transition_block("s2.b0", 32)
    for i in range(1, 9):
        b.residual_block(f"s2.b{i}")
    b.transition_block("s3.b0", 64)
    for i in range(1, 9):
        b.residual_block(f"s3.b{i}")
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


def _mobile_ir(num_classes, input_shape, seed):
    b = ArchBuilder("mobile_ir", input_shape, num_classes, seed)
    b.conv_block("stem", 16, act="relu6", prunable=False)
    b.inverted_residual_block("ir1", expansion=2, stride=2, out_ch=24)
    b.inverted_residual_block("ir2", expansion=4)
    b.inverted_residual_block("ir3", expansion=4, stride=2, out_ch=32)
    b.inverted_residual_block("ir4", expansion=4)
    b.inverted_residual_block("ir5", expansion=4)
    b.conv_block("headconv", 64, kernel=1, act="relu6")
    b.global_pool_block("pool")
    b.classifier_block("head", (1, 1))
    return b.build()


_BUILTINS = {
    "tiny_vgg": _tiny_vgg,
    "tiny_resnet": _tiny_resnet,
    "tiny_ir": _tiny_ir,
    "vgg16": _vgg16,
    "resnet56": _resnet56,
    "mobile_ir": _mobile_ir,
}


def builtin_arch(name, num_classes, input_shape, seed=0) -> ModelSnapshot:
    """Construct a named architecture with seeded random weights."""
    try:
        builder = _BUILTINS[name]
    except KeyError:
        raise ManifestError(f"unknown architecture {name!r}; known: {sorted(_BUILTINS)}") from None
    return builder(num_classes, input_shape, seed)
