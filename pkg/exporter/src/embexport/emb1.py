"""Minimal EMB1 writer/reader.

Layout (little-endian): magic "EMB1", u32 version=1, u8 dtype code
(0=f32, 1=f64), 3 reserved zero bytes, u64 N, u64 d, N*d values row-major,
u64 id-table byte length, then N ids as u32-length-prefixed UTF-8 strings.
This module is self-contained on purpose: the byte format is the only
contract shared with consumers.
"""

import struct

import numpy as np

MAGIC = b"EMB1"
_DTYPES = {"f32": (0, "<f4"), "f64": (1, "<f8")}
_CODES = {0: "<f4", 1: "<f8"}


def write_emb1(path, values, ids, dtype: str = "f64"):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {values.shape}")
    n, d = values.shape
    if len(ids) != n:
        raise ValueError(f"{len(ids)} ids for {n} rows")
    code, np_dtype = _DTYPES[dtype]
    id_blob = b"".join(struct.pack("<I", len(enc)) + enc
                       for enc in (s.encode("utf-8") for s in ids))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(bytes([code]) + b"\x00\x00\x00")
        fh.write(struct.pack("<QQ", n, d))
        fh.write(values.astype(np_dtype).tobytes())
        fh.write(struct.pack("<Q", len(id_blob)))
        fh.write(id_blob)
    return str(path)


def read_emb1(path):
    """Returns (float64 matrix, ids). Validation is the consumer's job; this
    reader only needs to round-trip the writer's own output."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("bad magic")
    code = blob[8]
    n, d = struct.unpack_from("<QQ", blob, 12)
    np_dtype = _CODES[code]
    item = np.dtype(np_dtype).itemsize
    off = 28
    values = np.frombuffer(blob, dtype=np_dtype, count=n * d, offset=off)
    values = values.reshape(n, d).astype(np.float64)
    off += n * d * item
    (id_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    ids = []
    end = off + id_len
    while off < end:
        (slen,) = struct.unpack_from("<I", blob, off)
        off += 4
        ids.append(blob[off:off + slen].decode("utf-8"))
        off += slen
    return values, ids
