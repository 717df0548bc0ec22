"""Writers for the grouprobe bundle formats.

The exporter deliberately carries its own serializer instead of importing the
toolkit: the file format is the contract between the two packages, and tests
round-trip exported bundles through the toolkit to prove both ends agree.

Embedding file: 16-byte header (magic "GRPE", version 1, dtype code 0=f32 /
1=f64, flags bit0 = unit-norm rows, reserved 0, then n and d as uint32 LE)
followed by n*d row-major little-endian values.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

EMB_HEADER = struct.Struct("<4sBBBBII")
SAMPLE_COLUMNS = ("id", "y", "s_true", "split", "s_pseudo")


def write_embeddings(values: np.ndarray, path, normalized: bool = False) -> None:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
        raise ValueError(f"need an n x d matrix with n >= 1, d >= 2, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("refusing to write non-finite embeddings")
    if values.dtype == np.float64:
        code, dtype = 1, "<f8"
    else:
        code, dtype = 0, "<f4"
    n, d = values.shape
    header = EMB_HEADER.pack(b"GRPE", 1, code, 1 if normalized else 0, 0, n, d)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values, dtype=dtype).tobytes())


def write_sample_table(rows: list[dict], path) -> None:
    """rows carry id/y/s_true/split (s_pseudo always starts unknown)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SAMPLE_COLUMNS)
    for row in rows:
        writer.writerow([row["id"], int(row["y"]), int(row["s_true"]), row["split"], -1])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def write_prompt_bank(class_emb, attr_emb, manifest: list[dict], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embeddings(class_emb, directory / "class.emb", normalized=True)
    write_embeddings(attr_emb, directory / "attr.emb", normalized=True)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
