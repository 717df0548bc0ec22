"""Dataset export: metadata CSV -> embeddings + sample table + prompt bank.

The metadata CSV drives everything (no hard-coded dataset layouts):

    id,path,y,s_true,split
    wb_0001,images/001.jpg,0,1,train

``path`` is resolved against the dataset root; ``s_true`` may be empty or -1
when the dataset carries no attribute annotation; ``split`` is train/val/test.

Prompt files are JSON arrays indexed by label: each entry is one template
string or a list of templates whose embeddings are averaged then renormalized.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .formats import write_embeddings, write_prompt_bank, write_sample_table

log = logging.getLogger("grouprobe_exporter")

SPLITS = ("train", "val", "test")
META_COLUMNS = ("id", "path", "y", "s_true", "split")


@dataclass
class ExportSpec:
    model: str
    data_root: str
    meta_csv: str
    class_prompts: str
    attr_prompts: str
    out_dir: str
    batch_size: int = 64
    device: str | None = None


@dataclass
class MetaRow:
    id: str
    path: Path
    y: int
    s_true: int
    split: str


def read_metadata(meta_csv, data_root) -> list[MetaRow]:
    data_root = Path(data_root)
    rows: list[MetaRow] = []
    seen = set()
    with open(meta_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in META_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{meta_csv}: missing metadata columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            split = row["split"].strip()
            if split not in SPLITS:
                raise ValueError(f"{meta_csv}:{lineno}: split must be one of {SPLITS}, got {split!r}")
            raw_s = row["s_true"].strip()
            sample_id = row["id"].strip()
            if sample_id in seen:
                raise ValueError(f"{meta_csv}:{lineno}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            rows.append(
                MetaRow(
                    id=sample_id,
                    path=data_root / row["path"].strip(),
                    y=int(row["y"]),
                    s_true=int(raw_s) if raw_s not in ("", "-1") else -1,
                    split=split,
                )
            )
    if not rows:
        raise ValueError(f"{meta_csv}: no data rows")
    return rows


def center_crop_224(image: Image.Image) -> Image.Image:
    """Resize the short side to 224 then take the central 224x224 crop."""
    image = image.convert("RGB")
    w, h = image.size
    scale = 224 / min(w, h)
    image = image.resize((max(224, round(w * scale)), max(224, round(h * scale))))
    w, h = image.size
    left, top = (w - 224) // 2, (h - 224) // 2
    return image.crop((left, top, left + 224, top + 224))


def export_images(spec: ExportSpec, encoder) -> tuple[np.ndarray, list[MetaRow]]:
    """Encode every readable image; unreadable rows are skipped and logged."""
    rows = read_metadata(spec.meta_csv, spec.data_root)
    kept: list[MetaRow] = []
    chunks: list[np.ndarray] = []
    batch_rows: list[MetaRow] = []
    batch_images: list[Image.Image] = []

    def flush():
        if not batch_images:
            return
        chunks.append(encoder.encode_images(batch_images))
        kept.extend(batch_rows)
        batch_rows.clear()
        batch_images.clear()

    skipped = 0
    for row in rows:
        try:
            with Image.open(row.path) as img:
                batch_images.append(center_crop_224(img))
            batch_rows.append(row)
        except (OSError, ValueError) as exc:
            skipped += 1
            log.warning("skipping unreadable image %s (%s)", row.path, exc)
            continue
        if len(batch_images) >= spec.batch_size:
            flush()
    flush()
    if not kept:
        raise ValueError("no readable images; nothing to export")
    embeddings = np.concatenate(chunks, axis=0)
    if embeddings.shape[0] != len(rows) - skipped:
        raise RuntimeError(
            f"embedding count {embeddings.shape[0]} does not match "
            f"{len(rows)} rows minus {skipped} skipped"
        )
    return embeddings, kept


def _load_templates(path) -> list[list[str]]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{path}: expected a nonempty JSON array of templates")
    templates: list[list[str]] = []
    for i, entry in enumerate(raw):
        group = [entry] if isinstance(entry, str) else list(entry)
        if not group or any(not str(t).strip() for t in group):
            raise ValueError(f"{path}: label {i} has an empty prompt")
        templates.append([str(t) for t in group])
    return templates


def export_prompts(spec: ExportSpec, encoder) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Encode class/attribute templates; multiple templates per label are
    averaged then renormalized. The manifest records the exact texts."""

    def encode_groups(groups, role):
        rows = np.empty((len(groups), encoder.d), dtype=np.float32)
        manifest = []
        for index, texts in enumerate(groups):
            vecs = encoder.encode_texts(texts).astype(np.float64)
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            mean = vecs.mean(axis=0)
            rows[index] = (mean / np.linalg.norm(mean)).astype(np.float32)
            manifest.append({"role": role, "index": index, "text": " | ".join(texts)})
        return rows, manifest

    class_rows, class_manifest = encode_groups(_load_templates(spec.class_prompts), "class")
    attr_rows, attr_manifest = encode_groups(_load_templates(spec.attr_prompts), "attribute")
    if class_rows.shape[0] < 2 or attr_rows.shape[0] < 2:
        raise ValueError("need at least 2 classes and 2 attributes")
    return class_rows, attr_rows, class_manifest + attr_manifest


def zero_shot_accuracy(image_emb: np.ndarray, prompt_emb: np.ndarray, labels) -> float:
    """In-process zero-shot check used to cross-validate against the toolkit."""
    x = image_emb.astype(np.float64)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    p = prompt_emb.astype(np.float64)
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    preds = (x @ p.T).argmax(axis=1)
    return float((preds == np.asarray(labels)).mean())


def run_export(spec: ExportSpec, encoder=None) -> Path:
    """Full export: images + sample table + prompt bank into a bundle dir."""
    from .encoders import resolve_encoder

    if encoder is None:
        encoder = resolve_encoder(spec.model)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    class_rows, attr_rows, manifest = export_prompts(spec, encoder)
    embeddings, kept = export_images(spec, encoder)
    if embeddings.shape[1] != class_rows.shape[1]:
        raise RuntimeError("image and prompt embedding dimensions disagree")
    max_y = max(r.y for r in kept)
    if max_y >= class_rows.shape[0]:
        raise ValueError(f"metadata labels reach {max_y} but only {class_rows.shape[0]} class prompts given")

    write_embeddings(embeddings, out / "images.emb")
    write_sample_table(
        [{"id": r.id, "y": r.y, "s_true": r.s_true, "split": r.split} for r in kept],
        out / "samples.csv",
    )
    write_prompt_bank(class_rows, attr_rows, manifest, out / "prompts")

    acc = zero_shot_accuracy(embeddings, class_rows, [r.y for r in kept])
    print(f"exported {len(kept)} samples (d={embeddings.shape[1]}) to {out}", file=sys.stderr)
    print(f"in-process zero-shot class accuracy: {acc:.4f}", file=sys.stderr)
    return out
