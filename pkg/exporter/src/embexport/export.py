"""Export jobs: per-layer embedding dumps and class-prompt prototypes."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .emb1 import write_emb1
from .encoders import ToyTextEncoder, get_encoder
from .errors import DuplicateClass, EmptyClassList, ExportError, LayerIndexInvalid

POOLINGS = ("mean", "last-token")


@dataclass
class ExportJob:
    encoder: str
    modality: str  # text | image | audio
    layers: list
    source: str  # caption file for text, directory of files otherwise
    out: str
    pool: str = "mean"
    batch_size: int = 32
    device: str = "cpu"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in ("text", "image", "audio"):
            raise ExportError(f"unknown modality {self.modality!r}")
        if self.pool not in POOLINGS:
            raise ExportError(f"pool must be one of {POOLINGS}")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")


def _pool(states: np.ndarray, pool: str) -> np.ndarray:
    if pool == "mean":
        return states.mean(axis=0)
    return states[-1]


def _check_layers(layers, encoder):
    if not layers:
        raise LayerIndexInvalid("no layers requested")
    if len(set(layers)) != len(layers):
        raise LayerIndexInvalid(f"duplicate layer indices in {layers}")
    for idx in layers:
        if not 0 <= idx < encoder.n_layers:
            raise LayerIndexInvalid(
                f"layer {idx} out of range for a {encoder.n_layers}-layer encoder")


def _read_inputs(job: ExportJob):
    """Returns (ids, raw inputs) in a stable order."""
    if job.modality == "text":
        with open(job.source, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise ExportError(f"no captions in {job.source}")
        return [f"{i:05d}" for i in range(len(lines))], lines
    names = sorted(f for f in os.listdir(job.source)
                   if os.path.isfile(os.path.join(job.source, f)))
    if not names:
        raise ExportError(f"no files in {job.source}")
    inputs = []
    for name in names:
        with open(os.path.join(job.source, name), "rb") as fh:
            inputs.append(fh.read())
    return names, inputs


def _encode(encoder, inputs, layers, pool, batch_size):
    """One pooled row per input per requested layer. Batching only chunks the
    loop; it never changes the numbers."""
    rows = {idx: [] for idx in layers}
    for start in range(0, len(inputs), batch_size):
        for item in inputs[start:start + batch_size]:
            states = encoder.hidden_states(item)
            for idx in layers:
                rows[idx].append(_pool(states[idx], pool))
    return {idx: np.stack(v) for idx, v in rows.items()}


def export_layers(job: ExportJob) -> str:
    """Writes one EMB1 file per layer plus sample_ids.json and manifest.json;
    returns the manifest path."""
    encoder = get_encoder(job.encoder)
    wants_text = isinstance(encoder, ToyTextEncoder)
    if wants_text != (job.modality == "text"):
        raise ExportError(
            f"encoder {job.encoder!r} does not accept {job.modality} inputs")
    layers = sorted(int(v) for v in job.layers)
    _check_layers(layers, encoder)
    ids, inputs = _read_inputs(job)
    pooled = _encode(encoder, inputs, layers, job.pool, job.batch_size)
    os.makedirs(job.out, exist_ok=True)
    ids_path = os.path.join(job.out, "sample_ids.json")
    with open(ids_path, "w", encoding="utf-8") as fh:
        json.dump(ids, fh, ensure_ascii=False)
    entries = []
    for idx in layers:
        fname = f"layer{idx:03d}.emb1"
        write_emb1(os.path.join(job.out, fname), pooled[idx], ids)
        entries.append({"layer": idx, "path": fname})
    manifest = {
        "layers": entries,
        "sample_ids_path": os.path.basename(ids_path),
        "encoder": job.encoder,
        "modality": job.modality,
        "pooling": job.pool,
    }
    mpath = os.path.join(job.out, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return mpath


def export_prototypes(encoder_name: str, classes, templates, layer: int,
                      out_path: str, pool: str = "mean") -> str:
    """Writes a C x d EMB1 file; row c is the mean over templates of the
    embedding of template.format(class_c), rows in class-list order."""
    if not classes or not templates:
        raise EmptyClassList("need at least one class and one template")
    seen = set()
    for c in classes:
        if c in seen:
            raise DuplicateClass(f"class {c!r} appears twice")
        seen.add(c)
    if pool not in POOLINGS:
        raise ExportError(f"pool must be one of {POOLINGS}")
    encoder = get_encoder(encoder_name)
    if not isinstance(encoder, ToyTextEncoder):
        raise ExportError("prototypes need a text encoder")
    _check_layers([layer], encoder)
    rows = []
    for cls in classes:
        embs = [_pool(encoder.hidden_states(t.format(cls))[layer], pool)
                for t in templates]
        rows.append(np.mean(embs, axis=0))
    return write_emb1(out_path, np.stack(rows), list(classes))
