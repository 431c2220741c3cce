"""Manifest skeletons for the supported architecture families.

The schema is defined by FORMAT.md at the repository root; this module
builds the JSON structures directly and stays independent of the pruning
library (the file format is the only shared contract). Source convs keep
their bias tensors, so conv layers here declare has_bias=true.
"""

VGG16_PLAN = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
              512, 512, 512, "M", 512, 512, 512, "M"]
TINY_VGG_WIDTHS = (8, 16, 16, 32)

FORMAT_VERSION = 1


class SkeletonError(ValueError):
    pass


def _layer(lid, kind, cin, cout, kernel=(1, 1), stride=(1, 1), padding=(0, 0),
           has_bias=False, prunable=False):
    return {"id": lid, "kind": kind, "in_channels": cin, "out_channels": cout,
            "kernel": list(kernel), "stride": list(stride), "padding": list(padding),
            "has_bias": has_bias, "prunable": prunable}


def _conv_block(layers, blocks, bid, cin, cout):
    layers[f"{bid}.conv"] = _layer(f"{bid}.conv", "conv", cin, cout, (3, 3), (1, 1), (1, 1),
                                   has_bias=True, prunable=True)
    layers[f"{bid}.bn"] = _layer(f"{bid}.bn", "batch_norm", cout, cout)
    layers[f"{bid}.act"] = _layer(f"{bid}.act", "relu", cout, cout)
    blocks.append({"id": bid, "kind": "plain",
                   "layer_ids": [f"{bid}.conv", f"{bid}.bn", f"{bid}.act"],
                   "prunable_bn_ids": [f"{bid}.bn"],
                   "internal_prunable_layer_ids": [f"{bid}.conv"]})
    return cout


def _head(layers, blocks, cin, spatial, num_classes):
    feat = cin * spatial[0] * spatial[1]
    layers["head.flatten"] = _layer("head.flatten", "flatten", cin, feat)
    layers["head.fc"] = _layer("head.fc", "fully_connected", feat, num_classes, has_bias=True)
    blocks.append({"id": "head", "kind": "plain",
                   "layer_ids": ["head.flatten", "head.fc"],
                   "prunable_bn_ids": [], "internal_prunable_layer_ids": []})


def vgg16_skeleton(num_classes, input_shape=(3, 32, 32)):
    c, h, w = input_shape
    layers, blocks = {}, []
    ci = pi = 0
    cin = c
    for item in VGG16_PLAN:
        if item == "M":
            pi += 1
            bid = f"pool{pi}"
            layers[f"{bid}.pool"] = _layer(f"{bid}.pool", "max_pool", cin, cin, (2, 2), (2, 2))
            blocks.append({"id": bid, "kind": "plain", "layer_ids": [f"{bid}.pool"],
                           "prunable_bn_ids": [], "internal_prunable_layer_ids": []})
            h, w = h // 2, w // 2
        else:
            ci += 1
            cin = _conv_block(layers, blocks, f"conv{ci}", cin, item)
    if h < 1 or w < 1:
        raise SkeletonError(f"input shape {input_shape} collapses under the vgg16 pooling stack")
    _head(layers, blocks, cin, (h, w), num_classes)
    return {"format_version": FORMAT_VERSION, "arch_name": "vgg16",
            "input_shape": list(input_shape), "num_classes": num_classes,
            "blocks": blocks, "layers": layers}


def tiny_vgg_skeleton(num_classes, input_shape=(3, 16, 16)):
    c, h, w = input_shape
    layers, blocks = {}, []
    cin = c
    for i, width in enumerate(TINY_VGG_WIDTHS, start=1):
        cin = _conv_block(layers, blocks, f"b{i}", cin, width)
    layers["pool.pool"] = _layer("pool.pool", "global_avg_pool", cin, cin)
    blocks.append({"id": "pool", "kind": "plain", "layer_ids": ["pool.pool"],
                   "prunable_bn_ids": [], "internal_prunable_layer_ids": []})
    _head(layers, blocks, cin, (1, 1), num_classes)
    return {"format_version": FORMAT_VERSION, "arch_name": "tiny_vgg",
            "input_shape": list(input_shape), "num_classes": num_classes,
            "blocks": blocks, "layers": layers}


def chain_order(manifest):
    out = []
    for b in manifest["blocks"]:
        out.extend(b["layer_ids"])
    return out


# canonical role order within a layer, per FORMAT.md
_ROLE_ORDER = ("w", "b", "gamma", "beta", "mean", "var")


def expected_tensors(manifest):
    """(tensor name, shape) pairs in canonical blob order."""
    out = []
    for lid in chain_order(manifest):
        lyr = manifest["layers"][lid]
        kind = lyr["kind"]
        if kind == "conv":
            kh, kw = lyr["kernel"]
            shapes = {"w": (lyr["out_channels"], lyr["in_channels"], kh, kw)}
            if lyr["has_bias"]:
                shapes["b"] = (lyr["out_channels"],)
        elif kind == "fully_connected":
            shapes = {"w": (lyr["out_channels"], lyr["in_channels"])}
            if lyr["has_bias"]:
                shapes["b"] = (lyr["out_channels"],)
        elif kind == "batch_norm":
            n = (lyr["out_channels"],)
            shapes = {"gamma": n, "beta": n, "mean": n, "var": n}
        else:
            continue
        for role in _ROLE_ORDER:
            if role in shapes:
                out.append((f"{lid}.{role}", shapes[role]))
    return out
