"""Cross-package contract: files written by embexport must load through the
alignlite store with nothing lost. The two packages share only the EMB1 byte
format and the manifest layout, so these tests are the compatibility gate."""

import numpy as np

from alignlite.store import load_embeddings_with_ids, load_layer_bank
from embexport.emb1 import read_emb1
from embexport.export import ExportJob, export_layers, export_prototypes


def test_criterion_11_layer_export_loads_in_consumer(tmp_path):
    caps = tmp_path / "caps.txt"
    caps.write_text("a red bird\ntwo dogs\na boat at sea\n", encoding="utf-8")
    job = ExportJob(encoder="toy-text-4x16", modality="text", layers=[1, 3],
                    source=str(caps), out=str(tmp_path / "bank"))
    manifest_path = export_layers(job)
    bank = load_layer_bank(manifest_path)
    assert bank.indices() == [1, 3]
    assert bank.sample_ids == ["00000", "00001", "00002"]
    for idx in (1, 3):
        mat = bank.matrix(idx)
        assert (mat.n, mat.d) == (3, 16)
        own, _ = read_emb1(tmp_path / "bank" / f"layer{idx:03d}.emb1")
        assert mat.data.tobytes() == own.tobytes()
    print("criterion 11 PASS: 3-caption 2-layer export round-trips with correct N, d, ids")


def test_criterion_11_prototypes_match_template_means(tmp_path):
    classes = ["cat", "dog"]
    templates = ["a photo of a {}", "a drawing of a {}"]
    out = str(tmp_path / "protos.emb1")
    export_prototypes("toy-text-4x16", classes, templates, layer=3, out_path=out)
    mat, ids = load_embeddings_with_ids(out)
    assert ids == classes
    assert (mat.n, mat.d) == (2, 16)
    from embexport.encoders import get_encoder

    enc = get_encoder("toy-text-4x16")
    for row, cls in zip(mat.data, classes):
        per_template = [enc.hidden_states(t.format(cls))[3].mean(axis=0)
                        for t in templates]
        np.testing.assert_allclose(row, np.mean(per_template, axis=0), atol=1e-6)
    print("criterion 11 PASS: 2x2 prototype export equals per-template means within 1e-6")
