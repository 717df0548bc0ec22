"""On-disk and in-memory data model: embedding matrices, sample tables, prompt banks.

Embedding file layout (16-byte header + payload, everything little-endian):

    bytes 0-3   magic "GRPE"
    byte  4     version (1)
    byte  5     dtype code: 0 = float32, 1 = float64
    byte  6     flags: bit0 = rows are unit L2 norm
    byte  7     reserved (0)
    bytes 8-11  n, uint32
    bytes 12-15 d, uint32
    then        n*d values, row-major

Sample tables are CSV with the exact header ``id,y,s_true,split,s_pseudo``
(UTF-8, LF line endings); unknown attributes are the sentinel -1. A prompt
bank is a directory holding ``class.emb``, ``attr.emb`` and ``manifest.json``.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    DegenerateInputError,
    FileFormatError,
    SchemaError,
    ValidationError,
)

EMB_MAGIC = b"GRPE"
EMB_VERSION = 1
EMB_HEADER = struct.Struct("<4sBBBBII")

_DTYPE_CODE = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

SPLITS = ("train", "val", "test")
SAMPLE_COLUMNS = ("id", "y", "s_true", "split", "s_pseudo")

UNIT_NORM_TOL = 1e-5


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EmbeddingMatrix:
    """An n x d dense real matrix of frozen encoder outputs.

    Rows are embedding vectors; ``normalized`` asserts every row has unit
    L2 norm (checked to 1e-5 at construction).
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError(f"embedding matrix must be 2-D, got shape {v.shape}")
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        n, d = v.shape
        if n < 1:
            raise ValidationError("embedding matrix needs at least one row")
        if d < 2:
            raise ValidationError(f"embedding dimension must be >= 2, got {d}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("embedding matrix contains non-finite values")
        if self.normalized:
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > UNIT_NORM_TOL:
                raise ValidationError(
                    f"normalized flag set but a row norm deviates from 1 by {worst:.3g}"
                )
        object.__setattr__(self, "values", _freeze(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype


def as_array(matrix) -> np.ndarray:
    """Accept an EmbeddingMatrix or a plain 2-D ndarray."""
    if isinstance(matrix, EmbeddingMatrix):
        return matrix.values
    return np.asarray(matrix)


def l2_normalize(matrix) -> EmbeddingMatrix:
    """Return a copy with unit-norm rows; rejects zero-norm rows."""
    v = as_array(matrix).astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(f"row {int(bad[0])} has zero norm, cannot normalize")
    return EmbeddingMatrix(v / norms[:, None], normalized=True)


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Serialize to the binary embedding format; deterministic byte-for-byte."""
    if not isinstance(matrix, EmbeddingMatrix):
        matrix = EmbeddingMatrix(np.asarray(matrix))
    code = _DTYPE_CODE[np.dtype(matrix.dtype)]
    flags = 1 if matrix.normalized else 0
    header = EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, code, flags, 0, matrix.n, matrix.d)
    payload = np.ascontiguousarray(matrix.values, dtype=_CODE_DTYPE[code]).tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed writing embedding file {path}: {exc}") from exc


def read_embeddings(path) -> EmbeddingMatrix:
    """Load a binary embedding file, checking header, payload size and finiteness."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < EMB_HEADER.size:
        raise FileFormatError(f"{path}: too short to hold an embedding header")
    magic, version, code, flags, _reserved, n, d = EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if version != EMB_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPE:
        raise FileFormatError(f"{path}: unknown dtype code {code}")
    dtype = _CODE_DTYPE[code]
    expected = n * d * dtype.itemsize
    got = len(raw) - EMB_HEADER.size
    if got != expected:
        raise CorruptFileError(f"{path}: payload holds {got} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype=dtype, count=n * d, offset=EMB_HEADER.size)
    values = values.reshape(n, d).astype(dtype.newbyteorder("="))
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    return EmbeddingMatrix(values, normalized=bool(flags & 1))


@dataclass(frozen=True)
class SampleTable:
    """Per-sample metadata aligned row-for-row with an EmbeddingMatrix.

    ``s_true``/``s_pseudo`` use -1 for "unknown".
    """

    ids: tuple
    y: np.ndarray
    s_true: np.ndarray
    split: tuple
    s_pseudo: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        split = tuple(str(s) for s in self.split)
        y = np.asarray(self.y, dtype=np.int64)
        s_true = np.asarray(self.s_true, dtype=np.int64)
        s_pseudo = np.asarray(self.s_pseudo, dtype=np.int64)
        n = len(ids)
        if n == 0:
            raise ValidationError("sample table is empty")
        for name, arr in (("y", y), ("s_true", s_true), ("s_pseudo", s_pseudo)):
            if arr.shape != (n,):
                raise ValidationError(f"column {name} has length {arr.shape}, expected {n}")
        if len(set(ids)) != n:
            raise ValidationError("sample ids are not unique")
        if np.any(y < 0):
            raise ValidationError("class labels y must be >= 0")
        if np.any(s_true < -1) or np.any(s_pseudo < -1):
            raise ValidationError("attribute labels must be >= -1 (-1 means unknown)")
        bad = [s for s in split if s not in SPLITS]
        if bad:
            raise SchemaError(f"illegal split value {bad[0]!r}; allowed: {', '.join(SPLITS)}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "s_true", _freeze(s_true))
        object.__setattr__(self, "s_pseudo", _freeze(s_pseudo))

    @property
    def n(self) -> int:
        return len(self.ids)

    def split_mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise SchemaError(f"unknown split {split!r}; allowed: {', '.join(SPLITS)}")
        return np.array([s == split for s in self.split], dtype=bool)

    def with_pseudo(self, s_pseudo, mask=None) -> "SampleTable":
        """Return a copy with s_pseudo replaced (on ``mask`` rows if given)."""
        new = np.asarray(s_pseudo, dtype=np.int64)
        if mask is not None:
            merged = self.s_pseudo.copy()
            merged[np.asarray(mask, dtype=bool)] = new
            new = merged
        return SampleTable(self.ids, self.y, self.s_true, self.split, new)

    def num_classes(self) -> int:
        return int(self.y.max()) + 1


def write_sample_table(table: SampleTable, path) -> None:
    """Write the sample CSV (exact header, UTF-8, LF endings)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SAMPLE_COLUMNS)
    for i in range(table.n):
        writer.writerow(
            [
                table.ids[i],
                int(table.y[i]),
                int(table.s_true[i]),
                table.split[i],
                int(table.s_pseudo[i]),
            ]
        )
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_sample_table(path) -> SampleTable:
    """Parse a sample CSV; schema errors name the offending column or value."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header) != SAMPLE_COLUMNS:
            missing = [c for c in SAMPLE_COLUMNS if c not in header]
            raise SchemaError(
                f"{path}: header {header} does not match {list(SAMPLE_COLUMNS)}"
                + (f" (missing {missing})" if missing else "")
            )
        ids, ys, s_trues, splits, s_pseudos = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SAMPLE_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(SAMPLE_COLUMNS)} fields, got {len(row)}")
            ids.append(row[0])
            try:
                ys.append(int(row[1]))
                s_trues.append(int(row[2]))
                s_pseudos.append(int(row[4]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-integer label field ({exc})") from None
            splits.append(row[3])
    try:
        return SampleTable(ids, ys, s_trues, splits, s_pseudos)
    except (ValidationError, SchemaError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


@dataclass(frozen=True)
class PromptEntry:
    role: str  # "class" | "attribute"
    index: int
    text: str


@dataclass(frozen=True)
class PromptBank:
    """Class and attribute prompt embeddings plus the text manifest."""

    class_embeddings: EmbeddingMatrix
    attr_embeddings: EmbeddingMatrix
    manifest: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "manifest", tuple(self.manifest))
        if self.class_embeddings.n < 2:
            raise ValidationError("need at least 2 class prompts")
        if self.attr_embeddings.n < 2:
            raise ValidationError("need at least 2 attribute prompts")
        if self.class_embeddings.d != self.attr_embeddings.d:
            raise ValidationError(
                f"class prompt d={self.class_embeddings.d} differs from "
                f"attribute prompt d={self.attr_embeddings.d}"
            )
        seen = {("class", i): 0 for i in range(self.class_embeddings.n)}
        seen.update({("attribute", i): 0 for i in range(self.attr_embeddings.n)})
        for entry in self.manifest:
            if entry.role not in ("class", "attribute"):
                raise ValidationError(f"manifest role {entry.role!r} unknown")
            key = (entry.role, entry.index)
            if key not in seen:
                raise ValidationError(f"manifest entry {key} does not match any row")
            seen[key] += 1
        off = [k for k, c in seen.items() if c != 1]
        if off:
            raise ValidationError(f"manifest must cover every row exactly once; off: {off[:4]}")

    @property
    def num_classes(self) -> int:
        return self.class_embeddings.n

    @property
    def num_attributes(self) -> int:
        return self.attr_embeddings.n

    @property
    def d(self) -> int:
        return self.class_embeddings.d


def default_manifest(num_classes: int, num_attributes: int) -> tuple:
    entries = [PromptEntry("class", i, f"class {i}") for i in range(num_classes)]
    entries += [PromptEntry("attribute", j, f"attribute {j}") for j in range(num_attributes)]
    return tuple(entries)


def write_prompt_bank(bank: PromptBank, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embeddings(bank.class_embeddings, directory / "class.emb")
    write_embeddings(bank.attr_embeddings, directory / "attr.emb")
    manifest = [
        {"role": e.role, "index": e.index, "text": e.text} for e in bank.manifest
    ]
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_prompt_bank(directory) -> PromptBank:
    directory = Path(directory)
    class_emb = read_embeddings(directory / "class.emb")
    attr_emb = read_embeddings(directory / "attr.emb")
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileFormatError(f"{directory}: missing manifest.json")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{manifest_path}: invalid JSON ({exc})") from None
    entries = tuple(PromptEntry(e["role"], int(e["index"]), e["text"]) for e in raw)
    return PromptBank(class_emb, attr_emb, entries)


@dataclass(frozen=True)
class DatasetBundle:
    """Embeddings + sample table + prompt bank, the unit every stage consumes."""

    images: EmbeddingMatrix
    samples: SampleTable
    prompts: PromptBank


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self):
        if self.ok:
            return "bundle valid"
        return "\n".join(f"- {f}" for f in self.findings)


def validate_bundle(bundle: DatasetBundle) -> ValidationReport:
    """Check every cross-field invariant; findings are report entries, not errors."""
    report = ValidationReport()
    images, samples, prompts = bundle.images, bundle.samples, bundle.prompts
    if samples.n != images.n:
        report.findings.append(
            f"sample rows ({samples.n}) do not match embedding rows ({images.n})"
        )
    if prompts.d != images.d:
        report.findings.append(
            f"prompt dimension ({prompts.d}) does not match image dimension ({images.d})"
        )
    k = prompts.num_classes
    if samples.y.max() >= k:
        report.findings.append(
            f"class label {int(samples.y.max())} out of range for {k} class prompts"
        )
    s_max = max(int(samples.s_true.max()), int(samples.s_pseudo.max()))
    if s_max >= prompts.num_attributes:
        report.findings.append(
            f"attribute label {s_max} out of range for {prompts.num_attributes} attribute prompts"
        )
    return report


def save_bundle(bundle: DatasetBundle, directory) -> None:
    """Write the standard bundle layout: images.emb, samples.csv, prompts/."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embeddings(bundle.images, directory / "images.emb")
    write_sample_table(bundle.samples, directory / "samples.csv")
    write_prompt_bank(bundle.prompts, directory / "prompts")


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    return DatasetBundle(
        images=read_embeddings(directory / "images.emb"),
        samples=read_sample_table(directory / "samples.csv"),
        prompts=read_prompt_bank(directory / "prompts"),
    )
