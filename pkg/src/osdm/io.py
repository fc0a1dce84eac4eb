"""Binary array files and the checkpoint container.

Array file layout (little-endian)::

    b"OSDM" | version u8 | ndim u8 | dims u32 * ndim | float32 payload | crc32 u32

The CRC covers every byte before it.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"OSDM"
VERSION = 1
CKPT_MAGIC = b"OSDMCKPT"
CKPT_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed or corrupted files."""


def encode_array(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    body = head + np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise FormatError("not an OSDM array file")
    version, ndim = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported array file version {version}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    start = 6 + 4 * ndim
    size = int(np.prod(dims, dtype=np.int64)) * 4
    if len(buf) != start + size + 4:
        raise FormatError("array file length does not match its header")
    (crc,) = struct.unpack_from("<I", buf, start + size)
    if zlib.crc32(buf[:start + size]) != crc:
        raise FormatError("array file CRC mismatch")
    return np.frombuffer(buf, dtype="<f4", count=size // 4, offset=start).reshape(dims).astype(np.float32)


def save_array(path, arr):
    Path(path).write_bytes(encode_array(arr))


def load_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]):
    """JSON header plus named float64 arrays, CRC-protected."""
    index = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode()
    body = CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise FormatError("not an OSDM checkpoint")
    version, hlen = struct.unpack_from("<BI", buf, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise FormatError("checkpoint CRC mismatch")
    header = json.loads(buf[13:13 + hlen])
    offset = 13 + hlen
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(buf, "<f8", n, offset).reshape(entry["shape"]).copy()
        offset += 8 * n
    return header["meta"], arrays
