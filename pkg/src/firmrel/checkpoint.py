"""Binary model-bundle files: magic, version, named blocks with checksums.

Each block carries a sha256 checksum of its payload; array payloads store
little-endian reals (32-bit by default, 64-bit when a bundle is cast for
gradient checking). Text payloads hold UTF-8 (vocab lines, key=value meta).
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FRLB"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}

KIND_ARRAYS = 0
KIND_TEXT = 1


class CheckpointError(ValueError):
    pass


def arrays_payload(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<H", len(arrays))]
    for key in sorted(arrays):
        a = arrays[key]
        code = _DTYPE_CODES.get(a.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {a.dtype} for {key!r}")
        kb = key.encode("utf-8")
        out.append(struct.pack("<H", len(kb)))
        out.append(kb)
        out.append(struct.pack("<BB", code, a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def parse_arrays(payload: bytes) -> dict[str, np.ndarray]:
    view = memoryview(payload)
    (n,) = struct.unpack_from("<H", view, 0)
    off = 2
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", view, off)
        off += 2
        key = bytes(view[off : off + klen]).decode("utf-8")
        off += klen
        code, ndim = struct.unpack_from("<BB", view, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", view, off)
        off += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dt.itemsize if ndim else dt.itemsize
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(view[off : off + size], dtype=dt, count=count).reshape(shape).copy()
        off += size
        arrays[key] = arr
    return arrays


def block_checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_blocks(path: str | Path, blocks: list[tuple[str, int, bytes]]) -> None:
    """blocks: (name, kind, payload) triples, written in the given order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(blocks))]
    for name, kind, payload in blocks:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", kind))
        out.append(hashlib.sha256(payload).digest())
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    Path(path).write_bytes(b"".join(out))


def read_blocks(path: str | Path) -> dict[str, tuple[int, bytes, str]]:
    """Returns {name: (kind, payload, checksum-hex)}; verifies checksums."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError("not a model bundle file (bad magic)")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported bundle version {version}")
    off = 12
    blocks: dict[str, tuple[int, bytes, str]] = {}
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        kind = raw[off]
        off += 1
        digest = raw[off : off + 32]
        off += 32
        (plen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        payload = raw[off : off + plen]
        off += plen
        if hashlib.sha256(payload).digest() != digest:
            raise CheckpointError(f"checksum mismatch in block {name!r}")
        blocks[name] = (kind, payload, digest.hex())
    return blocks
