"""Binary checkpoint format for policy parameters.

Layout, all little-endian:

    bytes 0-3   magic  b"TJSC"
    bytes 4-5   format version (uint16), currently 1
    bytes 6-9   manifest length in bytes (uint32)
    manifest    UTF-8 JSON: {"tensors": [{"name", "shape"}...], "meta": {...}}
    payload     float64 tensor data, concatenated in manifest order

The manifest's meta block records the dimensions the parameters were built
for (d_a, d_c, embed dim, layer counts) so loaders can reject mismatched run
configurations up front.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .policy import PolicyConfig, param_spec

MAGIC = b"TJSC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Dict[str, np.ndarray],
                    config: PolicyConfig) -> None:
    names = sorted(params)
    manifest = {
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "meta": {
            "embed_dim": config.embed_dim,
            "env_fusion_repeats": config.env_fusion_repeats,
            "temporal_layers": config.temporal_layers,
            "head_count": config.head_count,
            "d_a": config.d_a,
            "d_c": config.d_c,
            "rope_base": config.rope_base,
        },
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], PolicyConfig]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, = struct.unpack("<H", raw[4:6])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    blob_len, = struct.unpack("<I", raw[6:10])
    manifest = json.loads(raw[10:10 + blob_len].decode("utf-8"))
    meta = manifest["meta"]
    config = PolicyConfig(
        embed_dim=meta["embed_dim"],
        env_fusion_repeats=meta["env_fusion_repeats"],
        temporal_layers=meta["temporal_layers"],
        head_count=meta["head_count"],
        d_a=meta["d_a"],
        d_c=meta["d_c"],
        rope_base=meta["rope_base"],
    )
    params: Dict[str, np.ndarray] = {}
    offset = 10 + blob_len
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = raw[offset:offset + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        params[entry["name"]] = np.frombuffer(
            chunk, dtype="<f8").reshape(shape).copy()
        offset += n_bytes
    want = param_spec(config)
    if set(params) != set(want):
        missing = sorted(set(want) - set(params))
        extra = sorted(set(params) - set(want))
        raise CheckpointError(
            f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, shape in want.items():
        if params[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {params[name].shape}, "
                f"expected {shape}")
    return params, config
