"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PCCLEAN\\0"            8-byte magic
    uint32                   format version
    uint64                   header length in bytes
    header                   UTF-8 JSON: {"kind", "config", "meta",
                             "tensors": [{"name", "shape"}, ...]}
    tensor data              each tensor's values as float64 '<f8', in
                             header order, C-contiguous

The JSON header is written with sorted keys so identical models give
identical bytes.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PCCLEAN\0"
FORMAT_VERSION = 1
KINDS = ("detector", "denoiser")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    tensors: dict
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def dumps(ckpt):
    if ckpt.kind not in KINDS:
        raise CheckpointError(f"unknown model kind {ckpt.kind!r}")
    names = list(ckpt.tensors)
    arrays = [np.ascontiguousarray(ckpt.tensors[n], dtype="<f8") for n in names]
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head]
    parts.extend(a.tobytes() for a in arrays)
    return b"".join(parts)


def loads(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        version, hlen = struct.unpack_from("<IQ", blob, 8)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 8 + 12
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"truncated data for tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset) \
            .reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after tensor data")
    return Checkpoint(header["kind"], tensors, header.get("config", {}), header.get("meta", {}))


def save(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
