"""BTEN: a flat binary container for named tensors.

Layout, all integers little-endian:

    magic   4 bytes  "BTEN"
    version 1 byte   = 1
    count   u32      number of entries
    entry   repeated count times:
        name_len u16, name UTF-8 bytes
        dtype    1 byte   0=float32 1=float64 2=uint8 3=int32
        rank     1 byte
        extents  rank x u32
        payload  row-major little-endian values

Entries keep their write order on read. Round-trips are bitwise for all
four dtypes; there is no padding or alignment anywhere.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"BTEN"
VERSION = 1

_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "u1", 3: "<i4"}
_KIND_TO_CODE = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("i", 4): 3}
_NATIVE = {0: np.float32, 1: np.float64, 2: np.uint8, 3: np.int32}


def _dtype_code(arr: np.ndarray, name: str) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    code = _KIND_TO_CODE.get(key)
    if code is None:
        raise ContractError(
            f"entry {name!r} has dtype {arr.dtype}, supported: float32 float64 uint8 int32"
        )
    return code


def write_bten(path, tensors: dict) -> None:
    """Write named tensors in dict order; names must be unique non-empty."""
    if not isinstance(tensors, dict):
        raise ContractError(f"tensors must be a dict, got {type(tensors).__name__}")
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if not 1 <= len(raw) <= 0xFFFF:
            raise ContractError(f"entry name length must be 1..65535 bytes, got {len(raw)}")
        if arr.ndim > 0xFF:
            raise ContractError(f"entry {name!r} rank {arr.ndim} exceeds 255")
        code = _dtype_code(arr, name)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        for ext in arr.shape:
            if ext > 0xFFFFFFFF:
                raise ContractError(f"entry {name!r} extent {ext} exceeds u32")
            chunks.append(struct.pack("<I", ext))
        chunks.append(np.ascontiguousarray(arr).astype(_CODE_TO_DTYPE[code], copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated at byte {self.off}, needed {n} more")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out


def read_bten(path) -> dict:
    """Read a BTEN file back into an ordered dict of arrays."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a BTEN file")
    version, count = struct.unpack("<BI", r.take(5))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        if name_len == 0:
            raise FormatError(f"{path}: empty entry name at byte {r.off}")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: entry name is not valid UTF-8") from exc
        if name in out:
            raise FormatError(f"{path}: duplicate entry name {name!r}")
        code, rank = struct.unpack("<BB", r.take(2))
        if code not in _CODE_TO_DTYPE:
            raise FormatError(f"{path}: unknown dtype code {code} in entry {name!r}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        n_items = 1
        for ext in shape:
            n_items *= ext
        itemsize = np.dtype(_CODE_TO_DTYPE[code]).itemsize
        payload = r.take(n_items * itemsize)
        arr = np.frombuffer(payload, dtype=_CODE_TO_DTYPE[code]).astype(_NATIVE[code])
        out[name] = arr.reshape(shape)
    if r.off != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.off} trailing bytes after last entry")
    return out
