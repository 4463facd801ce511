"""Parameter checkpoints: flat binary blob plus a text manifest.

A checkpoint is a directory containing

  manifest.txt   header line, then one line per parameter:
                 <name> <dtype> <dim0,dim1,...> <byte offset> <byte count>
  params.bin     the raw little-endian C-order bytes, concatenated in
                 manifest order

Round-trips are bit-exact; loading verifies offsets and total size.
"""

import os

import numpy as np

from .tensor import Tensor

MANIFEST = "manifest.txt"
BLOB = "params.bin"
_MAGIC = "multiplane-checkpoint v1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, params):
    """Write `params` (name -> Tensor or ndarray) under directory `path`."""
    os.makedirs(path, exist_ok=True)
    lines = [_MAGIC, f"count {len(params)}"]
    blob = bytearray()
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name!r}")
        if any(ch.isspace() for ch in name):
            raise ValueError(f"parameter name contains whitespace: {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name} {arr.dtype.name} {shape} {len(blob)} {len(raw)}")
        blob += raw
    with open(os.path.join(path, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, BLOB), "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint directory back into an ordered name -> ndarray dict."""
    manifest_path = os.path.join(path, MANIFEST)
    with open(manifest_path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{manifest_path}: not a multiplane checkpoint")
    count = int(lines[1].split()[1])
    with open(os.path.join(path, BLOB), "rb") as fh:
        blob = fh.read()
    params = {}
    for line in lines[2 : 2 + count]:
        name, dtype, shape_s, offset_s, nbytes_s = line.split()
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        offset, nbytes = int(offset_s), int(nbytes_s)
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=_DTYPES[dtype]).reshape(shape)
        params[name] = arr.astype(dtype, copy=True)
    if len(params) != count:
        raise ValueError(f"{manifest_path}: expected {count} parameters, found {len(params)}")
    return params


def assign_parameters(params, loaded):
    """Copy checkpoint arrays into live Tensors, checking names and shapes."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.shape:
            raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype, copy=True)
