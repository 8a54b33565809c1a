"""Flat binary cache container: versioned header, named float64 arrays.

Layout (little-endian):
  magic (8 bytes) | version u32 | keyhash len u32 | keyhash bytes
  | n_arrays u32 | per array: [name len u32 | name utf-8 | ndim u32
  | dims u64 * ndim | data f64 row-major]

A container is only readable back if both magic and key hash match, so stale
caches invalidate themselves when the grid or build parameters change.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VERSION = 1


class CacheMismatch(Exception):
    """Container exists but was built for different inputs."""


def write_container(path, magic: bytes, keyhash: str, arrays: dict) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        kb = keyhash.encode()
        fh.write(struct.pack("<I", len(kb)))
        fh.write(kb)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    tmp.replace(path)


def read_container(path, magic: bytes, keyhash: str) -> dict:
    path = Path(path)
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got != magic:
            raise CacheMismatch(f"bad magic in {path}: {got!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CacheMismatch(f"container version {version} != {VERSION}")
        (klen,) = struct.unpack("<I", fh.read(4))
        got_hash = fh.read(klen).decode()
        if got_hash != keyhash:
            raise CacheMismatch(
                f"cache key mismatch in {path}: {got_hash} != {keyhash}"
            )
        (narr,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(narr):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            arrays[name] = data.copy()
        return arrays
