"""Shared binary checkpoint format for named float64 tensors.

Layout (little-endian): magic bytes ``EBLB``, format version as uint32,
then one record per tensor: name length (uint32), UTF-8 name, rank
(uint32), extents (uint64 each), values (float64, row-major).  Records
run to end of file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EBLB"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors; insertion order is preserved on disk."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read all tensor records back, in file order."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if len(data) < pos + name_len:
                raise struct.error("name runs past end of file")
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if len(data) < pos + 8 * count:
                raise struct.error("values run past end of file")
            values = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated record at byte {pos}: {exc}") from exc
        out[name] = values.reshape(shape).astype(np.float64)
    return out


def save_params(path, spec_names: list[str], params: list[np.ndarray],
                extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = dict(zip(spec_names, params))
    if extra:
        tensors.update(extra)
    save_tensors(path, tensors)


def load_params(path, spec_names: list[str]) -> list[np.ndarray]:
    tensors = load_tensors(path)
    missing = [n for n in spec_names if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")
    return [tensors[n] for n in spec_names]
