"""REMB review-embedding file writer.

Format (little-endian): magic ``REMB``, u32 version=1, u32 dim, u64 count,
then ``count`` records of ``u64 review_id`` + ``dim x f32``. Records are
written sorted by review id.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"REMB"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_ID = struct.Struct("<Q")


def write_remb(vectors: dict[int, np.ndarray], dim: int, path: str | Path) -> None:
    for rid, vec in vectors.items():
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise ValueError(f"review {rid}: expected {dim} components, got {vec.shape}")
        if not np.isfinite(vec).all():
            raise ValueError(f"review {rid}: non-finite component")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, len(vectors)))
        for rid in sorted(vectors):
            fh.write(_ID.pack(rid))
            fh.write(np.asarray(vectors[rid], dtype="<f4").tobytes())
