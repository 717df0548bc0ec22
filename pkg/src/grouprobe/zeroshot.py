"""Zero-shot cosine classification and pseudo-annotation of spurious attributes.

Logits are ``scale * cos(image, prompt)`` with scale defaulting to 30; for the
literal cos/temperature convention pass ``scale=1/30``. Argmax ties break
toward the lowest index and raise a degeneracy warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, IncompleteAnnotationError, ValidationError
from .tensor_io import SampleTable, as_array

DEFAULT_SCALE = 30.0


@dataclass(frozen=True)
class LogitMatrix:
    """n x C matrix of scaled cosine similarities."""

    values: np.ndarray
    scale: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValidationError("logits contain non-finite values")
        if self.scale <= 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class GroupAssignment:
    """Per-sample group index g = y * num_attrs + s, with tallied sizes."""

    g: np.ndarray
    num_classes: int
    num_attrs: int
    sizes: np.ndarray  # length num_classes * num_attrs

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_attrs

    def class_of_group(self) -> np.ndarray:
        return np.arange(self.num_groups) // self.num_attrs

    def group_of(self, y: int, s: int) -> int:
        return y * self.num_attrs + s


def _unit_rows(matrix, what: str) -> np.ndarray:
    v = as_array(matrix).astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(f"{what} row {int(bad[0])} has zero norm")
    return v / norms[:, None]


def cosine_logits(images, prompts, scale: float = DEFAULT_SCALE) -> LogitMatrix:
    """Scaled cosine similarity of every image row against every prompt row.

    Both operands are unit-normalized internally regardless of input flags.
    """
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    x = _unit_rows(images, "image")
    p = _unit_rows(prompts, "prompt")
    if x.shape[1] != p.shape[1]:
        raise ValidationError(
            f"dimension mismatch: images have d={x.shape[1]}, prompts d={p.shape[1]}"
        )
    return LogitMatrix(scale * (x @ p.T), scale)


def softmax_probs(logits) -> np.ndarray:
    """Row-wise softmax with max-subtraction; rows sum to 1 within 1e-12."""
    z = logits.values if isinstance(logits, LogitMatrix) else np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _argmax_low_tie(logits: np.ndarray) -> tuple[np.ndarray, int]:
    # np.argmax already returns the first maximal index; count rows with ties
    labels = np.argmax(logits, axis=1)
    top = logits[np.arange(len(labels)), labels]
    ties = int(((logits == top[:, None]).sum(axis=1) > 1).sum())
    return labels.astype(np.int64), ties


def zs_classify(images, prompts, scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Zero-shot labels: per-row argmax of cosine logits, ties toward index 0."""
    logits = cosine_logits(images, prompts, scale)
    labels, ties = _argmax_low_tie(logits.values)
    if ties:
        warnings.warn(f"{ties} zero-shot tie(s) broken toward the lowest index", stacklevel=2)
    return labels


def annotate_attributes(images, attr_prompts, scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Pseudo-annotate spurious attributes by nearest attribute prompt."""
    if as_array(attr_prompts).shape[0] < 2:
        raise ValidationError("need at least 2 attribute prompts")
    return zs_classify(images, attr_prompts, scale)


def average_prompt_rows(embeddings, owners, num_owners: int) -> np.ndarray:
    """Collapse several prompt rows per owner into one unit-norm row each.

    Used when attribute prompts carry class context ("a photo of a bird in a
    forest" / "... on water"): the per-class rows for one attribute value are
    averaged, then renormalized.
    """
    v = _unit_rows(embeddings, "prompt")
    owners = np.asarray(owners, dtype=np.int64)
    if owners.shape != (v.shape[0],):
        raise ValidationError("owners must assign exactly one owner per row")
    if owners.min() < 0 or owners.max() >= num_owners:
        raise ValidationError(f"owner indices must lie in [0, {num_owners})")
    out = np.zeros((num_owners, v.shape[1]))
    for owner in range(num_owners):
        rows = v[owners == owner]
        if rows.shape[0] == 0:
            raise ValidationError(f"owner {owner} has no prompt rows")
        out[owner] = rows.mean(axis=0)
    return _unit_rows(out, "averaged prompt")


def form_groups(
    samples: SampleTable,
    num_attrs: int,
    source: str = "pseudo",
    num_classes: int | None = None,
    mask=None,
) -> GroupAssignment:
    """Combine class labels with attributes into group indices g = y*|S| + s.

    ``source`` picks the attribute column ("pseudo" or "true"); rows with an
    unknown attribute raise IncompleteAnnotationError. ``mask`` restricts to a
    row subset (e.g. one split).
    """
    if source not in ("pseudo", "true"):
        raise ValidationError(f"group source must be 'pseudo' or 'true', got {source!r}")
    s = samples.s_pseudo if source == "pseudo" else samples.s_true
    y = samples.y
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        s, y = s[mask], y[mask]
    if np.any(s < 0):
        missing = int(np.flatnonzero(s < 0)[0])
        raise IncompleteAnnotationError(
            f"row {missing} has no {source} attribute; annotate before forming groups"
        )
    if np.any(s >= num_attrs):
        raise ValidationError(f"attribute label exceeds num_attrs={num_attrs}")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    g = y * num_attrs + s
    sizes = np.bincount(g, minlength=num_classes * num_attrs).astype(np.int64)
    return GroupAssignment(g=g.astype(np.int64), num_classes=num_classes, num_attrs=num_attrs, sizes=sizes)
