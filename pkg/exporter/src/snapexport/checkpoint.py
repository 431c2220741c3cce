"""Checkpoint readers: .npz archives and torch-style zip checkpoints.

The zip reader is a restricted unpickler that understands only the
tensor-storage persistent-id protocol, so reading .pth files does not
require the framework itself. Anything but plain tensor containers is
rejected.
"""

import os
import pickle
import zipfile
from collections import OrderedDict

import numpy as np


class CheckpointError(ValueError):
    pass


_STORAGE_DTYPES = {
    "FloatStorage": "<f4",
    "DoubleStorage": "<f8",
    "HalfStorage": "<f2",
    "LongStorage": "<i8",
    "IntStorage": "<i4",
    "ShortStorage": "<i2",
    "CharStorage": "i1",
    "ByteStorage": "u1",
    "BoolStorage": "?",
}


def _rebuild_tensor(storage, offset, size, stride, *unused):
    if len(size) == 0:
        return np.array(storage[offset])
    itemsize = storage.itemsize
    view = np.lib.stride_tricks.as_strided(
        storage[offset:], shape=tuple(size),
        strides=tuple(int(s) * itemsize for s in stride))
    return np.ascontiguousarray(view)


def _rebuild_parameter(data, *unused):
    return data


class _TensorUnpickler(pickle.Unpickler):
    def __init__(self, file, zf, prefix):
        super().__init__(file)
        self._zf = zf
        self._prefix = prefix

    def find_class(self, module, name):
        if (module, name) == ("collections", "OrderedDict"):
            return OrderedDict
        if module.startswith("torch"):
            if name == "_rebuild_tensor_v2":
                return _rebuild_tensor
            if name == "_rebuild_parameter":
                return _rebuild_parameter
            if name.endswith("Storage"):
                return name        # marker consumed by persistent_load
            if name == "Size":
                return tuple
        raise pickle.UnpicklingError(f"checkpoint references unsupported global {module}.{name}")

    def persistent_load(self, pid):
        if not (isinstance(pid, tuple) and pid and pid[0] == "storage"):
            raise pickle.UnpicklingError(f"unsupported persistent id {pid!r}")
        storage_type, key = pid[1], pid[2]
        type_name = storage_type if isinstance(storage_type, str) else storage_type.__name__
        dtype = _STORAGE_DTYPES.get(type_name)
        if dtype is None:
            raise CheckpointError(f"storage dtype {type_name!r} is not supported")
        raw = self._zf.read(f"{self._prefix}data/{key}")
        return np.frombuffer(raw, dtype=dtype)


def _read_torch_zip(path):
    with zipfile.ZipFile(path) as zf:
        candidates = [n for n in zf.namelist() if n.endswith("data.pkl")]
        if not candidates:
            raise CheckpointError(f"{path}: no data.pkl inside the zip checkpoint")
        pkl_name = candidates[0]
        prefix = pkl_name[: -len("data.pkl")]
        with zf.open(pkl_name) as f:
            obj = _TensorUnpickler(f, zf, prefix).load()
    return obj


def _flatten_state_dict(obj, path):
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise CheckpointError(f"{path}: checkpoint is not a parameter dictionary")
    out = {}
    for key, val in obj.items():
        arr = np.asarray(val)
        if arr.dtype == object:
            raise CheckpointError(f"{path}: entry {key!r} is not a tensor")
        out[str(key)] = arr
    return out


def read_checkpoint(path):
    """Parameter-name -> array mapping from a .npz or torch-zip checkpoint."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
        if any(n.endswith("data.pkl") for n in names):
            return _flatten_state_dict(_read_torch_zip(path), path)
        # .npz files are also zip archives, of .npy members
        if any(n.endswith(".npy") for n in names):
            with np.load(path) as archive:
                return {k: archive[k] for k in archive.files}
    raise CheckpointError(f"{path}: unrecognized checkpoint container "
                          "(expected .npz or a torch-style zip)")
