"""Binary model snapshots.

Layout, all integers little-endian::

    magic      8 bytes   b"SPHDSNAP"
    version    u16       1
    precision  u8        32 or 64
    meta_len   u32       then meta_len bytes of UTF-8 JSON
    count      u32       number of tensors, then per tensor:
        name_len u16, name (UTF-8), rank u8, dims u64 * rank,
        raw buffer (float32/float64 little-endian, row-major)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"SPHDSNAP"
VERSION = 1


def save_snapshot(path, tensors: Mapping[str, Tensor], meta: dict, precision: str) -> Path:
    tag = 64 if precision == "float64" else 32
    dtype = np.dtype("<f8") if tag == 64 else np.dtype("<f4")
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HB", VERSION, tag), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name].data
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def load_snapshot(path) -> tuple[dict[str, Tensor], dict, str]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read snapshot {path}: {exc}") from exc
    try:
        if buf[:8] != MAGIC:
            raise ValueError("bad magic")
        version, tag = struct.unpack_from("<HB", buf, 8)
        if version != VERSION or tag not in (32, 64):
            raise ValueError(f"unsupported version {version} / precision {tag}")
        pos = 11
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos : pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dtype = np.dtype("<f8") if tag == 64 else np.dtype("<f4")
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(dims)
            pos += n * dtype.itemsize
            tensors[name] = Tensor(arr.astype(dtype.newbyteorder("=")))
    except (ValueError, struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt snapshot {path}: {exc}") from exc
    return tensors, meta, "float64" if tag == 64 else "float32"
