import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from grouprobe_exporter import (
    ExportSpec,
    StubEncoder,
    center_crop_224,
    export_images,
    export_prompts,
    read_metadata,
    run_export,
    zero_shot_accuracy,
)

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
import export as export_cli  # noqa: E402


def _spec(data, out, model="stub-64", batch=4):
    return ExportSpec(
        model=model,
        data_root=str(data["root"]),
        meta_csv=str(data["meta"]),
        class_prompts=str(data["class_prompts"]),
        attr_prompts=str(data["attr_prompts"]),
        out_dir=str(out),
        batch_size=batch,
    )


def test_read_metadata(tiny_dataset):
    rows = read_metadata(tiny_dataset["meta"], tiny_dataset["root"])
    assert len(rows) == 12
    assert rows[0].id == "img000" and rows[0].split == "train"
    assert {r.split for r in rows} == {"train", "val", "test"}


def test_metadata_missing_column(tiny_dataset, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,path,y,split\na,x.png,0,train\n", encoding="utf-8")
    with pytest.raises(ValueError, match="s_true"):
        read_metadata(bad, tiny_dataset["root"])


def test_metadata_bad_split(tiny_dataset, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,path,y,s_true,split\na,x.png,0,0,dev\n", encoding="utf-8")
    with pytest.raises(ValueError, match="split"):
        read_metadata(bad, tiny_dataset["root"])


def test_metadata_empty_s_true_is_unknown(tiny_dataset, tmp_path):
    meta = tmp_path / "m.csv"
    meta.write_text("id,path,y,s_true,split\na,images/img_000.png,0,,train\n", encoding="utf-8")
    rows = read_metadata(meta, tiny_dataset["root"])
    assert rows[0].s_true == -1


def test_center_crop_shapes():
    for size in ((300, 200), (200, 300), (224, 224), (64, 500)):
        out = center_crop_224(Image.new("RGB", size, (10, 20, 30)))
        assert out.size == (224, 224)


def test_export_images_shape_contract(tiny_dataset, tmp_path):
    emb, kept = export_images(_spec(tiny_dataset, tmp_path / "out"), StubEncoder(64))
    assert emb.shape == (12, 64)
    assert emb.dtype == np.float32
    assert [r.id for r in kept] == [f"img{i:03d}" for i in range(12)]


def test_export_images_skips_corrupt(tiny_dataset, tmp_path):
    corrupt = tiny_dataset["root"] / "images" / "img_003.png"
    corrupt.write_bytes(b"this is definitely not a png")
    emb, kept = export_images(_spec(tiny_dataset, tmp_path / "out"), StubEncoder(64))
    assert emb.shape[0] == 11
    assert "img003" not in [r.id for r in kept]


def test_export_images_repeat_identical(tiny_dataset, tmp_path):
    spec = _spec(tiny_dataset, tmp_path / "out")
    a, kept_a = export_images(spec, StubEncoder(64))
    b, kept_b = export_images(spec, StubEncoder(64))
    assert np.array_equal(a, b)  # stub is exact; real encoders get 1e-5 slack
    assert [r.id for r in kept_a] == [r.id for r in kept_b]


def test_export_prompts_rows_and_manifest(tiny_dataset, tmp_path):
    class_rows, attr_rows, manifest = export_prompts(
        _spec(tiny_dataset, tmp_path / "out"), StubEncoder(64)
    )
    assert class_rows.shape == (2, 64) and attr_rows.shape == (2, 64)
    texts = {m["text"] for m in manifest if m["role"] == "attribute"}
    assert texts == {"a photo of a bird in a forest", "a photo of a bird on water"}
    assert np.allclose(np.linalg.norm(class_rows, axis=1), 1.0, atol=1e-6)


def test_duplicate_templates_average_to_single(tiny_dataset, tmp_path):
    single = json.loads(tiny_dataset["class_prompts"].read_text())
    dup = [["a photo of a waterbird", "a photo of a waterbird"], single[1]]
    dup_path = tmp_path / "dup.json"
    dup_path.write_text(json.dumps(dup), encoding="utf-8")
    spec = _spec(tiny_dataset, tmp_path / "out")
    spec.class_prompts = str(dup_path)
    rows, _, _ = export_prompts(spec, StubEncoder(64))
    enc = StubEncoder(64)
    expected = enc.encode_texts(["a photo of a waterbird"])[0]
    assert np.allclose(rows[0], expected, atol=1e-6)


def test_empty_template_rejected(tiny_dataset, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(["a prompt", ""]), encoding="utf-8")
    spec = _spec(tiny_dataset, tmp_path / "out")
    spec.class_prompts = str(bad)
    with pytest.raises(ValueError, match="empty"):
        export_prompts(spec, StubEncoder(64))


def test_exported_bundle_validates_with_toolkit(tiny_dataset, tmp_path):
    out = run_export(_spec(tiny_dataset, tmp_path / "bundle"))
    import grouprobe

    bundle = grouprobe.load_bundle(out)
    report = grouprobe.validate_bundle(bundle)
    assert report.ok, str(report)
    assert bundle.images.n == 12
    assert np.all(bundle.samples.s_pseudo == -1)
    assert bundle.prompts.num_classes == 2 and bundle.prompts.num_attributes == 2


def test_cross_implementation_zero_shot_consistency(tiny_dataset, tmp_path):
    out = run_export(_spec(tiny_dataset, tmp_path / "bundle"))
    import grouprobe

    bundle = grouprobe.load_bundle(out)
    toolkit_preds = grouprobe.zs_classify(bundle.images, bundle.prompts.class_embeddings)
    toolkit_acc = float((toolkit_preds == bundle.samples.y).mean())
    local_acc = zero_shot_accuracy(
        bundle.images.values, bundle.prompts.class_embeddings.values, bundle.samples.y
    )
    assert abs(toolkit_acc - local_acc) <= 0.001  # criterion allows 0.1 points


def test_cli_end_to_end(tiny_dataset, tmp_path, capsys):
    out = tmp_path / "bundle"
    code = export_cli.main(
        [
            "--model", "stub-32",
            "--data", str(tiny_dataset["root"]),
            "--meta", str(tiny_dataset["meta"]),
            "--class-prompts", str(tiny_dataset["class_prompts"]),
            "--attr-prompts", str(tiny_dataset["attr_prompts"]),
            "--out", str(out),
            "--batch", "5",
        ]
    )
    assert code == 0
    assert (out / "images.emb").exists()
    assert (out / "samples.csv").read_text().startswith("id,y,s_true,split,s_pseudo\n")
    assert (out / "prompts" / "manifest.json").exists()


def test_cli_bad_meta_exits_2(tiny_dataset, tmp_path):
    code = export_cli.main(
        [
            "--model", "stub-32",
            "--data", str(tiny_dataset["root"]),
            "--meta", str(tmp_path / "missing.csv"),
            "--class-prompts", str(tiny_dataset["class_prompts"]),
            "--attr-prompts", str(tiny_dataset["attr_prompts"]),
            "--out", str(tmp_path / "bundle"),
        ]
    )
    assert code == 2


def test_label_exceeding_prompts_rejected(tiny_dataset, tmp_path):
    meta = tiny_dataset["meta"]
    text = meta.read_text().replace("img000,images/img_000.png,0", "img000,images/img_000.png,7")
    meta.write_text(text, encoding="utf-8")
    with pytest.raises(ValueError, match="class prompts"):
        run_export(_spec(tiny_dataset, tmp_path / "bundle"))
