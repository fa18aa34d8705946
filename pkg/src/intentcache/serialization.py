"""Flat binary parameter files.

Layout (little-endian)::

    magic   4 bytes  b"ICPF"
    version u32
    seed    i64
    nsect   u32
    nsect x section table entry:
        name_len u16, name utf-8, ndim u8, ndim x u64 dims
    payload: every section's values as row-major float64, in table order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"ICPF"
VERSION = 1


def write_params(path: str | Path, sections: dict[str, np.ndarray], seed: int = 0) -> None:
    header = [MAGIC, struct.pack("<IqI", VERSION, seed, len(sections))]
    payload = []
    for name, arr in sections.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        header.append(struct.pack("<H", len(encoded)) + encoded)
        header.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(header) + b"".join(payload))


def read_params(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    """Return ``(sections, seed)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParseError(f"{path}: not a parameter file")
    version, seed, nsect = struct.unpack_from("<IqI", data, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    off = 4 + struct.calcsize("<IqI")
    table = []
    for _ in range(nsect):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        table.append((name, shape))
    sections = {}
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        if off + 8 * n > len(data):
            raise ParseError(f"{path}: truncated section {name!r}")
        sections[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return sections, seed
