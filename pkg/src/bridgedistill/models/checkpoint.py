"""Binary checkpoint format.

Layout (little-endian)::

    b"BDCK"  u32 version=1  u32 count
    count x { u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64), u8 rank,
              rank x u32 dims, raw IEEE-754 data }
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from ..autodiff import Tensor

MAGIC = b"BDCK"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Union[str, os.PathLike], tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> None:
    """Write tensors in name-sorted order so identical models give identical bytes."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        t = tensors[name]
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: Union[str, os.PathLike]) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            code, rank = struct.unpack_from("<BB", buf, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            dt = _DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(dims)
            off += n * dt.itemsize
            out[name] = arr.astype(dt.newbyteorder("="))
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out
