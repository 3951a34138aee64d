"""Minimal binary tensor container.

Layout (all little-endian)::

    magic    8 bytes  b"GMUTNSR\\0"
    version  u16      currently 1
    dtype    u8       0=f32, 1=f64, 2=u32, 3=u8
    rank     u8
    shape    rank x u64
    payload  row-major packed values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CorruptPayload, TruncatedPayload, UnsupportedVersion

MAGIC = b"GMUTNSR\0"
VERSION = 1
_HEAD = struct.Struct("<8sHBB")
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u4"), 3: np.dtype("u1")}
_KINDS = {v.newbyteorder("="): k for k, v in _CODES.items()} | {v: k for k, v in _CODES.items()}


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _KINDS.get(arr.dtype)
    if code is None:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32, float64, uint32 or uint8")
    if arr.ndim > 255:
        raise ValueError("rank too large")
    head = _HEAD.pack(MAGIC, VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_tensor(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns it and the end offset."""
    buf = memoryview(buf)
    if bytes(buf[offset:offset + len(MAGIC)]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[offset:offset + len(MAGIC)])!r}")
    if len(buf) - offset < _HEAD.size:
        raise TruncatedPayload("tensor header is truncated")
    _, version, code, rank = _HEAD.unpack_from(buf, offset)
    if version != VERSION:
        raise UnsupportedVersion(f"tensor format version {version} (supported: {VERSION})")
    if code not in _CODES:
        raise CorruptPayload(f"unknown dtype code {code}")
    pos = offset + _HEAD.size
    if len(buf) - pos < 8 * rank:
        raise TruncatedPayload("shape block is truncated")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _CODES[code]
    nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(buf) - pos < nbytes:
        raise TruncatedPayload(f"payload has {len(buf) - pos} bytes, header declares {nbytes}")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    arr, end = decode_tensor(data)
    if end != len(data):
        raise CorruptPayload(f"{len(data) - end} trailing bytes after tensor payload")
    return arr
