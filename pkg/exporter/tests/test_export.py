import json
import os

import numpy as np
import pytest

from embexport.cli import main
from embexport.emb1 import read_emb1
from embexport.encoders import ToyBytesEncoder, ToyTextEncoder, get_encoder
from embexport.errors import (
    DuplicateClass,
    EmptyClassList,
    EncoderUnavailable,
    ExportError,
    LayerIndexInvalid,
)
from embexport.export import ExportJob, export_layers, export_prototypes

ENC = "toy-text-4x16"


def _captions(tmp_path, lines=("a red bird", "two dogs", "a boat at sea")):
    p = tmp_path / "caps.txt"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(p)


def _job(tmp_path, **kw):
    base = dict(encoder=ENC, modality="text", layers=[1, 3],
                source=_captions(tmp_path), out=str(tmp_path / "bank"))
    base.update(kw)
    return ExportJob(**base)


class TestEncoders:
    def test_toy_name_grammar(self):
        enc = get_encoder("toy-text-6x32")
        assert isinstance(enc, ToyTextEncoder)
        assert (enc.n_layers, enc.d) == (6, 32)
        assert isinstance(get_encoder("toy-bytes-2x8"), ToyBytesEncoder)

    def test_hidden_state_shapes(self):
        states = get_encoder(ENC).hidden_states("three word caption")
        assert len(states) == 4
        assert all(s.shape == (3, 16) for s in states)

    def test_same_token_same_vector(self):
        enc = get_encoder(ENC)
        a = enc.hidden_states("dog cat")
        b = enc.hidden_states("cat dog")
        np.testing.assert_array_equal(a[2][0], b[2][1])

    def test_layers_differ(self):
        states = get_encoder(ENC).hidden_states("dog")
        assert not np.array_equal(states[0], states[1])

    def test_empty_text_gets_sentinel_token(self):
        states = get_encoder(ENC).hidden_states("")
        assert states[0].shape == (1, 16)

    def test_hub_encoder_unavailable(self):
        with pytest.raises(EncoderUnavailable):
            get_encoder("roberta-base")


class TestExportLayers:
    def test_three_captions_two_layers(self, tmp_path):
        manifest_path = export_layers(_job(tmp_path))
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert [e["layer"] for e in manifest["layers"]] == [1, 3]
        assert manifest["pooling"] == "mean"
        root = os.path.dirname(manifest_path)
        with open(os.path.join(root, manifest["sample_ids_path"]), encoding="utf-8") as fh:
            ids = json.load(fh)
        assert ids == ["00000", "00001", "00002"]
        for entry in manifest["layers"]:
            vals, file_ids = read_emb1(os.path.join(root, entry["path"]))
            assert vals.shape == (3, 16)
            assert file_ids == ids

    def test_mean_pool_matches_hand_computation(self, tmp_path):
        manifest_path = export_layers(_job(tmp_path, layers=[2]))
        root = os.path.dirname(manifest_path)
        vals, _ = read_emb1(os.path.join(root, "layer002.emb1"))
        want = get_encoder(ENC).hidden_states("a red bird")[2].mean(axis=0)
        np.testing.assert_allclose(vals[0], want, atol=1e-12)

    def test_last_token_pool(self, tmp_path):
        mp = export_layers(_job(tmp_path, layers=[2], pool="last-token",
                                out=str(tmp_path / "lt")))
        vals, _ = read_emb1(os.path.join(os.path.dirname(mp), "layer002.emb1"))
        want = get_encoder(ENC).hidden_states("a red bird")[2][-1]
        np.testing.assert_array_equal(vals[0], want)

    def test_rerun_byte_identical(self, tmp_path):
        mp = export_layers(_job(tmp_path))
        root = os.path.dirname(mp)
        first = {f: open(os.path.join(root, f), "rb").read()
                 for f in sorted(os.listdir(root))}
        export_layers(_job(tmp_path))
        for f, blob in first.items():
            assert open(os.path.join(root, f), "rb").read() == blob, f

    def test_batch_size_never_changes_values(self, tmp_path):
        m1 = export_layers(_job(tmp_path, batch_size=1, out=str(tmp_path / "b1")))
        m2 = export_layers(_job(tmp_path, batch_size=64, out=str(tmp_path / "b64")))
        v1, _ = read_emb1(os.path.join(os.path.dirname(m1), "layer001.emb1"))
        v2, _ = read_emb1(os.path.join(os.path.dirname(m2), "layer001.emb1"))
        np.testing.assert_array_equal(v1, v2)

    def test_bytes_modality_ids_are_sorted_filenames(self, tmp_path):
        src = tmp_path / "imgs"
        src.mkdir()
        for name, blob in (("b.png", b"\x01\x02"), ("a.png", b"\x03"), ("c.png", b"\x04")):
            (src / name).write_bytes(blob)
        job = ExportJob(encoder="toy-bytes-3x8", modality="image", layers=[0, 2],
                        source=str(src), out=str(tmp_path / "bank"))
        mp = export_layers(job)
        with open(mp, encoding="utf-8") as fh:
            manifest = json.load(fh)
        root = os.path.dirname(mp)
        with open(os.path.join(root, manifest["sample_ids_path"]), encoding="utf-8") as fh:
            assert json.load(fh) == ["a.png", "b.png", "c.png"]

    def test_invalid_layer_99(self, tmp_path):
        with pytest.raises(LayerIndexInvalid):
            export_layers(_job(tmp_path, layers=[1, 99]))

    def test_duplicate_layers_rejected(self, tmp_path):
        with pytest.raises(LayerIndexInvalid):
            export_layers(_job(tmp_path, layers=[1, 1]))

    def test_no_layers_rejected(self, tmp_path):
        with pytest.raises(LayerIndexInvalid):
            export_layers(_job(tmp_path, layers=[]))

    def test_modality_encoder_mismatch(self, tmp_path):
        with pytest.raises(ExportError):
            export_layers(_job(tmp_path, modality="image", source=str(tmp_path)))

    def test_empty_caption_file(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("\n\n", encoding="utf-8")
        with pytest.raises(ExportError):
            export_layers(_job(tmp_path, source=str(p)))

    def test_unknown_modality(self, tmp_path):
        with pytest.raises(ExportError):
            _job(tmp_path, modality="smell")


class TestExportPrototypes:
    def test_rows_are_template_means(self, tmp_path):
        classes = ["cat", "dog"]
        templates = ["a photo of a {}", "a drawing of a {}"]
        out = str(tmp_path / "protos.emb1")
        export_prototypes(ENC, classes, templates, layer=3, out_path=out)
        vals, ids = read_emb1(out)
        assert ids == classes
        assert vals.shape == (2, 16)
        enc = get_encoder(ENC)
        for row, cls in zip(vals, classes):
            per_template = [enc.hidden_states(t.format(cls))[3].mean(axis=0)
                            for t in templates]
            np.testing.assert_allclose(row, np.mean(per_template, axis=0), atol=1e-6)

    def test_single_template_two_classes(self, tmp_path):
        out = str(tmp_path / "p.emb1")
        export_prototypes(ENC, ["x", "y"], ["a {}"], layer=0, out_path=out)
        vals, ids = read_emb1(out)
        assert vals.shape == (2, 16) and ids == ["x", "y"]

    def test_zero_templates(self, tmp_path):
        with pytest.raises(EmptyClassList):
            export_prototypes(ENC, ["x"], [], layer=0,
                              out_path=str(tmp_path / "p.emb1"))

    def test_zero_classes(self, tmp_path):
        with pytest.raises(EmptyClassList):
            export_prototypes(ENC, [], ["a {}"], layer=0,
                              out_path=str(tmp_path / "p.emb1"))

    def test_duplicate_class_rejected(self, tmp_path):
        with pytest.raises(DuplicateClass):
            export_prototypes(ENC, ["x", "x"], ["a {}"], layer=0,
                              out_path=str(tmp_path / "p.emb1"))

    def test_needs_text_encoder(self, tmp_path):
        with pytest.raises(ExportError):
            export_prototypes("toy-bytes-2x8", ["x"], ["a {}"], layer=0,
                              out_path=str(tmp_path / "p.emb1"))


class TestCli:
    def test_layers_command(self, tmp_path, capsys):
        caps = _captions(tmp_path)
        rc = main(["layers", "--encoder", ENC, "--modality", "text",
                   "--layers", "1,3", "--source", caps,
                   "--out", str(tmp_path / "bank")])
        assert rc == 0
        assert "manifest.json" in capsys.readouterr().out
        assert (tmp_path / "bank" / "layer003.emb1").exists()

    def test_prototypes_command(self, tmp_path):
        (tmp_path / "classes.txt").write_text("cat\ndog\n", encoding="utf-8")
        (tmp_path / "templates.txt").write_text("a photo of a {}\n", encoding="utf-8")
        rc = main(["prototypes", "--encoder", ENC,
                   "--classes", str(tmp_path / "classes.txt"),
                   "--templates", str(tmp_path / "templates.txt"),
                   "--layer", "2", "--out", str(tmp_path / "p.emb1")])
        assert rc == 0
        vals, ids = read_emb1(tmp_path / "p.emb1")
        assert ids == ["cat", "dog"]

    def test_bad_layer_exits_2(self, tmp_path, capsys):
        rc = main(["layers", "--encoder", ENC, "--modality", "text",
                   "--layers", "99", "--source", _captions(tmp_path),
                   "--out", str(tmp_path / "bank")])
        assert rc == 2
        assert "out of range" in capsys.readouterr().err

    def test_missing_source_exits_2(self, tmp_path):
        rc = main(["layers", "--encoder", ENC, "--modality", "text",
                   "--layers", "1", "--source", str(tmp_path / "nope.txt"),
                   "--out", str(tmp_path / "bank")])
        assert rc == 2
