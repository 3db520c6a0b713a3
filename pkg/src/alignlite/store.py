"""On-disk embedding format (EMB1) and the in-memory data model.

EMB1 layout, little-endian throughout:
    magic 'EMB1' | u32 version=1 | u8 dtype (0=f32, 1=f64) | 3 zero bytes |
    u64 N | u64 d | N*d values row-major | u64 id-table byte length |
    N ids, each a u32 length prefix + UTF-8 bytes
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CountOutOfRange,
    DimensionMismatch,
    DuplicateId,
    DtypeUnsupported,
    IdMismatch,
    MalformedHeader,
    NonFiniteValue,
    RowCountMismatch,
    TruncatedPayload,
)
from .rng import stream

_MAGIC = b"EMB1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_NAMES = {0: "f32", 1: "f64"}
_NAME_CODES = {"f32": 0, "f64": 1}


@dataclass
class EmbeddingMatrix:
    """Dense N x d matrix. Compute dtype is always f64; `dtype` records storage width."""

    data: np.ndarray
    dtype: str = "f64"

    def __post_init__(self):
        if self.dtype not in _NAME_CODES:
            raise DtypeUnsupported(self.dtype)
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise MalformedHeader(f"matrix must be 2-d with N >= 1, d >= 1, got shape {arr.shape}")
        self.data = arr

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class PairedDataset:
    """Row-aligned pair of embedding matrices; row i of each modality is one paired sample."""

    modality_a: EmbeddingMatrix
    modality_b: EmbeddingMatrix
    ids: list

    def __post_init__(self):
        if self.modality_a.n != self.modality_b.n or self.modality_a.n != len(self.ids):
            raise RowCountMismatch(
                f"a.N={self.modality_a.n} b.N={self.modality_b.n} ids={len(self.ids)}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("ids must be unique")

    @property
    def n(self) -> int:
        return self.modality_a.n


@dataclass
class LayerBank:
    """Per-layer embedding matrices of one encoder over a fixed sample set."""

    layers: list  # list of (layer_index, EmbeddingMatrix), indices strictly increasing
    sample_ids: list

    def __post_init__(self):
        n = len(self.sample_ids)
        prev = None
        for idx, mat in self.layers:
            if mat.n != n:
                raise RowCountMismatch(f"layer {idx} has N={mat.n}, expected {n}")
            if prev is not None and idx <= prev:
                raise MalformedHeader("layer indices must be strictly increasing")
            prev = idx

    def indices(self):
        return [idx for idx, _ in self.layers]

    def matrix(self, layer_index):
        for idx, mat in self.layers:
            if idx == layer_index:
                return mat
        raise KeyError(layer_index)


@dataclass
class SplitSpec:
    seed: int
    train_count: int = None
    train_fraction: float = None
    shuffle: bool = True


def _validate_finite(values, n, d):
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = int(bad[0][0]), int(bad[0][1])
        raise NonFiniteValue(r, c)


def load_embeddings(path) -> EmbeddingMatrix:
    mat, _ = load_embeddings_with_ids(path)
    return mat


def load_embeddings_with_ids(path):
    """Read an EMB1 file; returns (EmbeddingMatrix, ids). f32 payloads are widened to f64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28:
        raise MalformedHeader("file shorter than fixed header")
    if blob[:4] != _MAGIC:
        raise MalformedHeader(f"bad magic {blob[:4]!r}")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != 1:
        raise MalformedHeader(f"unsupported version {version}")
    dcode = blob[8]
    if dcode not in _DTYPE_CODES:
        raise DtypeUnsupported(f"dtype code {dcode}")
    if blob[9:12] != b"\x00\x00\x00":
        raise MalformedHeader("reserved bytes must be zero")
    n, d = struct.unpack_from("<QQ", blob, 12)
    if n < 1 or d < 1:
        raise MalformedHeader(f"N={n}, d={d} out of range")
    dt = _DTYPE_CODES[dcode]
    need = n * d * dt.itemsize
    off = 28
    if len(blob) < off + need + 8:
        raise TruncatedPayload(f"need {need} payload bytes + id table, have {len(blob) - off}")
    raw = np.frombuffer(blob, dtype=dt, count=n * d, offset=off).reshape(n, d)
    off += need
    (id_bytes,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) < off + id_bytes:
        raise TruncatedPayload("id table truncated")
    ids = []
    end = off + id_bytes
    for _ in range(n):
        if off + 4 > end:
            raise TruncatedPayload("id table ended early")
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + ln > end:
            raise TruncatedPayload("id entry overruns table")
        ids.append(blob[off:off + ln].decode("utf-8"))
        off += ln
    if off != end:
        raise TruncatedPayload("id table has trailing bytes")
    values = raw.astype(np.float64)
    _validate_finite(values, n, d)
    return EmbeddingMatrix(values, dtype=_DTYPE_NAMES[dcode]), ids


def save_embeddings(path, matrix: EmbeddingMatrix, ids=None):
    """Write an EMB1 file. Values are stored at the matrix's declared storage dtype."""
    n, d = matrix.n, matrix.d
    if ids is None:
        ids = [str(i) for i in range(n)]
    if len(ids) != n:
        raise RowCountMismatch(f"{len(ids)} ids for N={n}")
    code = _NAME_CODES[matrix.dtype]
    payload = np.ascontiguousarray(matrix.data.astype(_DTYPE_CODES[code])).tobytes()
    id_blob = b"".join(
        struct.pack("<I", len(s.encode("utf-8"))) + s.encode("utf-8") for s in ids
    )
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(bytes([code, 0, 0, 0]))
        fh.write(struct.pack("<QQ", n, d))
        fh.write(payload)
        fh.write(struct.pack("<Q", len(id_blob)))
        fh.write(id_blob)
    return path


def compose_paired(a: EmbeddingMatrix, b: EmbeddingMatrix, ids) -> PairedDataset:
    return PairedDataset(a, b, list(ids))


def subsample(ds: PairedDataset, spec: SplitSpec):
    """Deterministic disjoint (train, held_out) partition."""
    n = ds.n
    count = spec.train_count
    if count is None:
        if spec.train_fraction is None:
            raise CountOutOfRange("SplitSpec needs train_count or train_fraction")
        count = int(round(spec.train_fraction * n))
    if not 1 <= count < n:
        raise CountOutOfRange(f"train_count={count} must satisfy 1 <= count < N={n}")
    order = np.arange(n)
    if spec.shuffle:
        # seeded Fisher-Yates, then prefix split
        rng = stream(spec.seed, "subsample")
        for i in range(n - 1, 0, -1):
            j = int(rng.integers(0, i + 1))
            order[i], order[j] = order[j], order[i]
    tr, ho = order[:count], order[count:]
    return _take(ds, tr), _take(ds, ho)


def _take(ds: PairedDataset, idx):
    return PairedDataset(
        EmbeddingMatrix(ds.modality_a.data[idx], dtype=ds.modality_a.dtype),
        EmbeddingMatrix(ds.modality_b.data[idx], dtype=ds.modality_b.dtype),
        [ds.ids[i] for i in idx],
    )


def mix(base: PairedDataset, extra: PairedDataset) -> PairedDataset:
    """Concatenate two datasets; colliding extra ids get a deterministic #mix<n> suffix."""
    if base.modality_a.d != extra.modality_a.d or base.modality_b.d != extra.modality_b.d:
        raise DimensionMismatch(
            f"({base.modality_a.d},{base.modality_b.d}) vs ({extra.modality_a.d},{extra.modality_b.d})"
        )
    seen = set(base.ids)
    new_ids = []
    for raw in extra.ids:
        cand, n = raw, 0
        while cand in seen:
            n += 1
            cand = f"{raw}#mix{n}"
        seen.add(cand)
        new_ids.append(cand)
    return PairedDataset(
        EmbeddingMatrix(
            np.vstack([base.modality_a.data, extra.modality_a.data]), dtype=base.modality_a.dtype
        ),
        EmbeddingMatrix(
            np.vstack([base.modality_b.data, extra.modality_b.data]), dtype=base.modality_b.dtype
        ),
        base.ids + new_ids,
    )


def save_layer_bank(dirpath, bank: LayerBank, prefix="layer"):
    """Write one EMB1 per layer plus a JSON manifest and the shared id list."""
    import os

    os.makedirs(dirpath, exist_ok=True)
    ids_path = os.path.join(dirpath, "sample_ids.json")
    with open(ids_path, "w", encoding="utf-8") as fh:
        json.dump(bank.sample_ids, fh, ensure_ascii=False)
    entries = []
    for idx, mat in bank.layers:
        p = os.path.join(dirpath, f"{prefix}{idx:03d}.emb1")
        save_embeddings(p, mat, bank.sample_ids)
        entries.append({"layer": idx, "path": os.path.basename(p)})
    manifest = {"layers": entries, "sample_ids_path": os.path.basename(ids_path)}
    mpath = os.path.join(dirpath, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return mpath


def load_layer_bank(manifest_path) -> LayerBank:
    import os

    root = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(root, manifest["sample_ids_path"]), "r", encoding="utf-8") as fh:
        sample_ids = json.load(fh)
    layers = []
    for entry in sorted(manifest["layers"], key=lambda e: e["layer"]):
        mat, ids = load_embeddings_with_ids(os.path.join(root, entry["path"]))
        if ids != sample_ids:
            raise IdMismatch(f"layer {entry['layer']} ids differ from sample_ids_path")
        layers.append((int(entry["layer"]), mat))
    return LayerBank(layers, sample_ids)
