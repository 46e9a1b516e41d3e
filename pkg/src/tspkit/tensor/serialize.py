"""Flat binary container for named float64 arrays.

Layout (all integers little-endian u32)::

    b"TSPK" | version
    repeated until EOF:
        name_len | name (UTF-8) | rank | extents[rank] | float64 LE payload
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"TSPK"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not a TSPK container (bad magic)")
    if len(blob) < 8:
        raise FormatError("truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    pos = 8
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(blob):
                raise FormatError(f"entry {name!r}: payload truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated container at byte {pos}") from exc
    return out


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
