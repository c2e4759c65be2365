"""Binary ensemble checkpoints.

Layout (all integers little-endian)::

    b"DIVT" | u16 version | u32 manifest length | manifest JSON | f64 blobs

The manifest lists each member's architecture string, input shape, leaky-ReLU
slope, class count and, per tensor, its name, shape, byte offset into the blob
section and element count. Output is byte-stable: same ensemble, same bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .models import Ensemble, Member, SpecError, parse_spec

MAGIC = b"DIVT"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def dumps(ens: Ensemble) -> bytes:
    members = []
    blobs = []
    offset = 0
    for m in ens.members:
        tensors = []
        for name, shape in m.spec.param_shapes().items():
            arr = np.ascontiguousarray(m.params[name], dtype="<f8")
            if arr.shape != shape:
                raise CheckpointError(f"tensor {name} has shape {arr.shape}, spec expects {shape}")
            raw = arr.tobytes()
            tensors.append({"name": name, "shape": list(shape), "offset": offset, "count": int(arr.size)})
            blobs.append(raw)
            offset += len(raw)
        members.append({
            "spec": str(m.spec),
            "input_shape": list(m.spec.input_shape),
            "alpha": m.spec.alpha,
            "classes": m.spec.classes,
            "tensors": tensors,
        })
    manifest = json.dumps({"members": members, "data_bytes": offset}, sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(blobs)


def loads(buf: bytes) -> Ensemble:
    if len(buf) < _HEADER.size:
        raise CheckpointError(f"file too short for a checkpoint header ({len(buf)} bytes)")
    magic, version, mlen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    start = _HEADER.size + mlen
    if len(buf) < start:
        raise CheckpointError("truncated checkpoint: manifest is incomplete")
    try:
        manifest = json.loads(buf[_HEADER.size:start])
    except ValueError as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    data = buf[start:]
    if len(data) != manifest["data_bytes"]:
        raise CheckpointError(f"truncated checkpoint: expected {manifest['data_bytes']} data bytes, found {len(data)}")

    members = []
    for idx, entry in enumerate(manifest["members"]):
        try:
            spec = parse_spec(entry["spec"], entry["input_shape"], entry["alpha"])
        except SpecError as exc:
            raise CheckpointError(f"member {idx}: {exc}") from None
        if spec.classes != entry["classes"]:
            raise CheckpointError(f"member {idx}: manifest says {entry['classes']} classes, spec has {spec.classes}")
        expected = spec.param_shapes()
        names = [t["name"] for t in entry["tensors"]]
        if names != list(expected):
            raise CheckpointError(f"member {idx}: tensor names {names} do not match spec {list(expected)}")
        params = {}
        for t in entry["tensors"]:
            shape = tuple(t["shape"])
            if shape != expected[t["name"]]:
                raise CheckpointError(
                    f"member {idx}: tensor {t['name']} has shape {shape}, spec {entry['spec']} expects {expected[t['name']]}"
                )
            if int(np.prod(shape)) != t["count"]:
                raise CheckpointError(f"member {idx}: tensor {t['name']} count does not match its shape")
            end = t["offset"] + 8 * t["count"]
            if end > len(data):
                raise CheckpointError(f"member {idx}: tensor {t['name']} runs past the end of the file")
            params[t["name"]] = np.frombuffer(data[t["offset"]:end], dtype="<f8").astype(np.float64).reshape(shape)
        members.append(Member(spec, params))
    return Ensemble(members)


def save_checkpoint(ens: Ensemble, path) -> Path:
    path = Path(path)
    payload = dumps(ens)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Ensemble:
    return loads(Path(path).read_bytes())
