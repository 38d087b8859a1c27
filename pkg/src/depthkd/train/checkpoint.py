"""Checkpoint container: magic, version, fingerprint, JSON metadata, named tensors.

Layout (little-endian)::

    b"DDCK" | u32 version | u32 len + fingerprint | u32 len + meta JSON
    | u32 count | count * (u32 len + name | u64 len + .dtns blob)
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, NamedTuple, Optional

import numpy as np

from ..core import dtns
from ..errors import FingerprintError, FormatError

MAGIC = b"DDCK"
VERSION = 1


class Checkpoint(NamedTuple):
    fingerprint: str
    meta: dict
    tensors: "OrderedDict[str, np.ndarray]"


def encode(fingerprint: str, meta: dict, tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for text in (fingerprint, json.dumps(meta, sort_keys=True)):
        raw = text.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        blob = dtns.encode(np.asarray(arr))
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(blob)), blob]
    return b"".join(parts)


def decode(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{source}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4))
    fingerprint = take(n).decode("utf-8")
    (n,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(n).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: corrupt metadata ({exc})") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (n,) = struct.unpack("<Q", take(8))
        tensors[name] = dtns.decode(take(n), f"{source}:{name}")
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes")
    return Checkpoint(fingerprint, meta, tensors)


def save(path, fingerprint: str, meta: dict, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(fingerprint, meta, tensors))
    os.replace(tmp, path)
    return path


def load(path, expected_fingerprint: Optional[str] = None) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc})") from exc
    ck = decode(buf, str(path))
    if expected_fingerprint is not None and ck.fingerprint != expected_fingerprint:
        raise FingerprintError(
            f"{path}: architecture fingerprint mismatch\n  checkpoint: {ck.fingerprint}\n  expected:   {expected_fingerprint}")
    return ck
