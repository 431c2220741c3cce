"""Checkpoint -> snapshot conversion.

Builds the arch family's name mapping, fails closed on any unmapped or
missing parameter, converts non-f32 values with a warning, and writes the
manifest+blob pair with bit-exact f32 payloads.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import read_checkpoint
from .skeleton import expected_tensors, tiny_vgg_skeleton, vgg16_skeleton


class ExportError(ValueError):
    pass


_VGG16_CONV_IDX = [0, 3, 7, 10, 14, 17, 20, 24, 27, 30, 34, 37, 40]
_TINY_CONV_IDX = [0, 3, 6, 9]

_BN_ROLES = [("weight", "gamma"), ("bias", "beta"),
             ("running_mean", "mean"), ("running_var", "var")]


def _family_mapping(conv_indices, block_ids):
    """source parameter name -> target tensor name, plus known-ignored names."""
    mapping = {}
    ignored = set()
    for idx, bid in zip(conv_indices, block_ids):
        mapping[f"features.{idx}.weight"] = f"{bid}.conv.w"
        mapping[f"features.{idx}.bias"] = f"{bid}.conv.b"
        for src, dst in _BN_ROLES:
            mapping[f"features.{idx + 1}.{src}"] = f"{bid}.bn.{dst}"
        ignored.add(f"features.{idx + 1}.num_batches_tracked")
    mapping["classifier.weight"] = "head.fc.w"
    mapping["classifier.bias"] = "head.fc.b"
    return mapping, ignored


_FAMILIES = {
    "vgg16": {
        "skeleton": vgg16_skeleton,
        "default_input": (3, 32, 32),
        "mapping": lambda: _family_mapping(_VGG16_CONV_IDX,
                                           [f"conv{i}" for i in range(1, 14)]),
    },
    "tiny_vgg": {
        "skeleton": tiny_vgg_skeleton,
        "default_input": (3, 16, 16),
        "mapping": lambda: _family_mapping(_TINY_CONV_IDX,
                                           [f"b{i}" for i in range(1, 5)]),
    },
}


@dataclass
class ExportSummary:
    arch: str
    num_classes: int
    input_shape: tuple
    mapped: dict = field(default_factory=dict)     # source name -> tensor name
    ignored: list = field(default_factory=list)    # known non-tensor bookkeeping
    converted: list = field(default_factory=list)  # names cast to f32, with dtypes
    total_bytes: int = 0

    def to_json(self):
        return {"arch": self.arch, "num_classes": self.num_classes,
                "input_shape": list(self.input_shape),
                "mapped_parameters": len(self.mapped),
                "ignored": sorted(self.ignored),
                "converted_to_f32": sorted(self.converted),
                "blob_bytes": self.total_bytes}


def export(checkpoint_path, arch_name, out_manifest, out_blob, input_shape=None):
    """Convert a checkpoint into a loadable manifest+blob pair."""
    family = _FAMILIES.get(arch_name)
    if family is None:
        raise ExportError(f"unknown architecture family {arch_name!r}; "
                          f"known: {sorted(_FAMILIES)}")
    params = read_checkpoint(checkpoint_path)
    mapping, known_ignored = family["mapping"]()

    unmapped = sorted(set(params) - set(mapping) - known_ignored)
    if unmapped:
        raise ExportError(f"checkpoint has {len(unmapped)} unmapped parameter(s): "
                          + ", ".join(unmapped))
    missing = sorted(set(mapping) - set(params))
    if missing:
        raise ExportError(f"checkpoint is missing {len(missing)} expected parameter(s): "
                          + ", ".join(missing))

    if "classifier.weight" not in params:
        raise ExportError("checkpoint has no classifier.weight; cannot infer class count")
    num_classes = int(params["classifier.weight"].shape[0])
    input_shape = tuple(input_shape) if input_shape else family["default_input"]
    manifest = family["skeleton"](num_classes, input_shape)

    summary = ExportSummary(arch_name, num_classes, input_shape)
    tensors = {}
    for src, dst in mapping.items():
        arr = params[src]
        if arr.dtype != np.float32:
            summary.converted.append(f"{src} ({arr.dtype})")
            arr = arr.astype(np.float32)
        tensors[dst] = np.ascontiguousarray(arr)
        summary.mapped[src] = dst
    summary.ignored = sorted(known_ignored & set(params))

    for name, shape in expected_tensors(manifest):
        if name not in tensors:
            raise ExportError(f"internal mapping gap: no source for tensor {name}")
        got = tuple(tensors[name].shape)
        if got != tuple(shape):
            raise ExportError(f"tensor {name}: checkpoint shape {got} != expected {tuple(shape)}")
        if name.endswith(".var") and not np.all(tensors[name] > 0):
            raise ExportError(f"tensor {name}: running_var has non-positive entries")

    records = []
    chunks = []
    offset = 0
    for name, _ in expected_tensors(manifest):
        raw = tensors[name].tobytes()
        records.append({"name": name, "dtype": "f32",
                        "shape": list(tensors[name].shape),
                        "byte_offset": offset, "byte_length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest["tensors"] = records
    with open(out_manifest, "w") as f:
        json.dump(manifest, f, indent=1)
    with open(out_blob, "wb") as f:
        f.write(b"".join(chunks))
    summary.total_bytes = offset
    return summary
