"""Parameter checkpoint container: JSON header + raw little-endian values.

Layout: 8-byte little-endian uint64 header length, UTF-8 JSON header, then the
concatenated raw parameter bytes.  The header lists name/shape/dtype/offset per
parameter plus a free-form metadata dict.
"""

from __future__ import annotations

import json
import numpy as np

from .autodiff import Tensor

CKPT_VERSION = "skinfield-ckpt-v1"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params, meta=None):
    """Write named tensors (dict name -> Tensor/ndarray) plus metadata."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str if arr.dtype.str.startswith("<") else "<" + arr.dtype.str[1:],
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": CKPT_VERSION,
        "params": entries,
        "meta": meta or {},
    }
    hdr = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(hdr).to_bytes(8, "little"))
        f.write(hdr)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path, requires_grad=True):
    """Read a checkpoint; returns (params dict of Tensors, meta dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    hlen = int.from_bytes(blob[:8], "little")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad checkpoint header: {e}") from e
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}")
    base = 8 + hlen
    params = {}
    for ent in header["params"]:
        start = base + ent["offset"]
        raw = blob[start:start + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CheckpointError(f"{path}: truncated data for parameter {ent['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).copy()
        params[ent["name"]] = Tensor(arr, requires_grad=requires_grad)
    return params, header.get("meta", {})
