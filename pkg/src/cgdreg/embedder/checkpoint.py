"""Binary checkpoint container for embedder parameters.

Layout (all integers little-endian)::

    b"CGDN"                      magic
    uint32   format version
    uint32   length of the architecture JSON, then the UTF-8 JSON
    uint32   tensor count
    per tensor:
        uint16 name length, UTF-8 name
        uint8  ndim, ndim x uint32 dims
        prod(dims) x float64 ('<f8'), C order
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from .network import Architecture, EmbedderParams

MAGIC = b"CGDN"
FORMAT_VERSION = 1


def dumps(params: EmbedderParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    arch = params.arch.to_json().encode("utf-8")
    buf.write(struct.pack("<I", len(arch)))
    buf.write(arch)
    names = params.names()
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> EmbedderParams:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise InvalidArgument("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise InvalidArgument("not a CGDN checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    (alen,) = struct.unpack("<I", take(4))
    arch = Architecture.from_json(bytes(take(alen)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        tensors[name] = arr
    if pos != len(view):
        raise InvalidArgument("trailing bytes after checkpoint")
    return EmbedderParams(arch, tensors)


def save(params: EmbedderParams, path) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> EmbedderParams:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())
