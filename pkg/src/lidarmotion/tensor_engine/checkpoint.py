"""Binary parameter checkpoints.

Layout (all integers little-endian u32, all values little-endian f64)::

    b"CKPT1\\n"
    count
    count x (name_len, name, ndim, dims..., values...)      parameter values
    count x (name_len, name, ndim, dims..., values...)      Adam first moments
    count x (name_len, name, ndim, dims..., values...)      Adam second moments
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List

import numpy as np

MAGIC = b"CKPT1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointEntry:
    name: str
    values: np.ndarray
    m: np.ndarray
    v: np.ndarray


def _write_block(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_block(f: BinaryIO):
    (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
    name = _read_exact(f, name_len, "name").decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(f, 4, "dim count"))
    dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "dims")) if ndim else ()
    count = int(np.prod(dims)) if ndim else 1
    values = np.frombuffer(_read_exact(f, 8 * count, f"values of {name}"), dtype="<f8")
    return name, values.reshape(dims).astype(np.float64)


def dumps(entries: List[CheckpointEntry]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(entries)))
    for e in entries:
        _write_block(buf, e.name, np.asarray(e.values))
    for e in entries:
        _write_block(buf, e.name, np.asarray(e.m))
    for e in entries:
        _write_block(buf, e.name, np.asarray(e.v))
    return buf.getvalue()


def loads(data: bytes) -> List[CheckpointEntry]:
    f = io.BytesIO(data)
    if f.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a CKPT1 checkpoint")
    (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
    values = [_read_block(f) for _ in range(count)]
    ms = [_read_block(f) for _ in range(count)]
    vs = [_read_block(f) for _ in range(count)]
    entries = []
    for (name, val), (mn, m), (vn, v) in zip(values, ms, vs):
        if not (name == mn == vn) or m.shape != val.shape or v.shape != val.shape:
            raise CheckpointError(f"moment blocks do not match parameter {name!r}")
        entries.append(CheckpointEntry(name, val, m, v))
    if f.read(1):
        raise CheckpointError("trailing bytes after checkpoint")
    return entries


def save(path, entries: List[CheckpointEntry]) -> None:
    Path(path).write_bytes(dumps(entries))


def load(path) -> List[CheckpointEntry]:
    return loads(Path(path).read_bytes())
