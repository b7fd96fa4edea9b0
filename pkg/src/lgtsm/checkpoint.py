"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"LGTSMCK" + version byte (b"1")
    u32 header length N
    N bytes of UTF-8 JSON: {"meta": {...}, "tensors": [{name, dims, dtype, offset, nbytes, crc}, ...]}
    tensor payloads, back to back; ``offset`` is relative to the first payload byte
    u32 CRC32 of every preceding byte

The JSON is written with sorted keys and tensors sorted by name, so the file is
a pure function of its contents and save -> load -> save is byte-identical.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"LGTSMCK"
VERSION = b"1"
DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "u8": "u1"}
_CODE = {np.dtype(v): k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    stage: str = "pretrain"
    step: int = 0
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.stage == other.stage and self.step == other.step and self.meta == other.meta
                and self.tensors.keys() == other.tensors.keys()
                and all(self.tensors[k].dtype == other.tensors[k].dtype and np.array_equal(self.tensors[k], other.tensors[k])
                        for k in self.tensors))


def _dtype_code(a: np.ndarray) -> str:
    try:
        return _CODE[a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype]
    except KeyError:
        raise CheckpointError(f"unsupported tensor dtype {a.dtype}") from None


def to_bytes(ck: Checkpoint) -> bytes:
    entries, payloads, off = [], [], 0
    for name in sorted(ck.tensors):
        a = np.asarray(ck.tensors[name])
        code = _dtype_code(a)
        raw = np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()
        entries.append({"name": name, "dims": list(a.shape), "dtype": code, "offset": off,
                        "nbytes": len(raw), "crc": zlib.crc32(raw)})
        payloads.append(raw)
        off += len(raw)
    meta = dict(ck.meta, stage=ck.stage, step=ck.step)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + VERSION + struct.pack("<I", len(header)) + header + b"".join(payloads)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, ck: Checkpoint) -> None:
    data = to_bytes(ck)
    with open(path, "wb") as f:
        f.write(data)


def from_bytes(blob: bytes, source="<bytes>") -> Checkpoint:
    if len(blob) < 8 or blob[:7] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if blob[7:8] != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {blob[7:8]!r} (this build reads {VERSION!r})")
    if len(blob) < 16:
        raise CheckpointError(f"{source}: truncated checkpoint ({len(blob)} bytes)")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    hstart, pstart = 12, 12 + hlen
    if pstart + 4 > len(blob):
        raise CheckpointError(f"{source}: truncated header (needs {hlen} bytes at offset {hstart})")
    body, (stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    try:
        header = json.loads(blob[hstart:pstart].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{source}: CRC mismatch, corrupt header at offset {hstart}") from None
    tensors = {}
    for e in header["tensors"]:
        start = pstart + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"] or start + e["nbytes"] > len(body):
            raise CheckpointError(f"{source}: truncated payload for {e['name']} at offset {start}")
        if zlib.crc32(raw) != e["crc"]:
            raise CheckpointError(f"{source}: CRC mismatch in tensor {e['name']!r} at offset {start}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=DTYPES[e["dtype"]]).reshape(e["dims"]).copy()
    if zlib.crc32(body) != stored:
        raise CheckpointError(f"{source}: CRC mismatch in header region at offset {hstart} (file CRC at offset {len(body)})")
    meta = header["meta"]
    stage, step = meta.pop("stage"), meta.pop("step")
    return Checkpoint(stage, step, tensors, meta)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read(), path)
