"""Tensor container used for learners, subspaces and base weights.

Layout (all integers little-endian)::

    magic         4 bytes  b"CITF"
    version       u32      currently 1
    manifest_len  u32
    manifest      UTF-8 text, one ``key=value`` per line, keys sorted
    n_tensors     u32
    n_tensors x record:
        name_len  u16, name (UTF-8)
        ndim      u8,  dims (u32 each)
        data      prod(dims) little-endian float32
    crc32         u32 over every preceding byte

Values are stored as 32-bit floats; a float64 array round-trips exactly when
its entries are float32-representable (see :func:`to_stored_precision`).
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np

from ..errors import IntegrityError

MAGIC = b"CITF"
VERSION = 1


def to_stored_precision(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64).astype("<f4").astype(np.float64)


def encode(meta: dict[str, str], tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise ValueError(f"manifest entry {key!r} is not representable")
        lines.append(f"{key}={value}\n")
    text = "".join(lines).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"file truncated while reading {field}", field)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def decode(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise IntegrityError("not a tensor container (bad magic)", "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise IntegrityError(f"unsupported container version {version}", "version")
    (mlen,) = r.unpack("<I", "manifest length")
    try:
        text = r.take(mlen, "manifest").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IntegrityError("manifest is not valid UTF-8", "manifest") from exc
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise IntegrityError(f"malformed manifest line {line!r}", "manifest")
        meta[key] = value
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(nlen, f"tensor {i} name").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B", f"tensor {name!r} rank")
        shape = r.unpack(f"<{ndim}I", f"tensor {name!r} shape")
        n = int(np.prod(shape)) if ndim else 1
        raw = r.take(4 * n, f"tensor {name!r} data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    body_end = r.pos
    (crc,) = r.unpack("<I", "checksum")
    if r.pos != len(data):
        raise IntegrityError("unexpected bytes after checksum", "checksum")
    if zlib.crc32(data[:body_end]) != crc:
        raise IntegrityError("checksum mismatch", "checksum")
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise IntegrityError(f"tensor {name!r} holds non-finite values", name)
    return meta, tensors


def write_container(path, meta, tensors) -> int:
    data = encode(meta, tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return len(data)


def read_container(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
