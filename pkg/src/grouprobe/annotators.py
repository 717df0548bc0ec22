"""Baseline pseudo-annotators: K-means over (optionally PCA-reduced) features
and ERM-confidence labeling, plus the permutation mapping used to score them.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor_io import SampleTable, as_array


@dataclass(frozen=True)
class PCAResult:
    projected: np.ndarray  # n x dims scores
    components: np.ndarray  # dims x d principal axes
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray


def pca_reduce(embeddings, dims: int) -> PCAResult:
    """Project onto the top principal components of the mean-centered data.

    Component signs are fixed by making each component's largest-magnitude
    loading positive, so the projection is deterministic.
    """
    x = as_array(embeddings).astype(np.float64)
    n, d = x.shape
    if not 1 <= dims <= d:
        raise ValidationError(f"dims must lie in [1, {d}], got {dims}")
    mean = x.mean(axis=0)
    centered = x - mean
    # SVD of the centered data; eigvals of covariance = s^2 / (n - 1)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    denom = max(n - 1, 1)
    variance = (s**2) / denom
    total = variance.sum()
    components = vt[:dims]
    signs = np.sign(components[np.arange(dims), np.abs(components).argmax(axis=1)])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]
    projected = centered @ components.T
    ratio = variance[:dims] / total if total > 0 else np.zeros(dims)
    return PCAResult(
        projected=projected,
        components=components,
        mean=mean,
        explained_variance=variance[:dims],
        explained_variance_ratio=ratio,
    )


@dataclass(frozen=True)
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    inertia_history: tuple = field(default_factory=tuple)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all points coincide with chosen centroids; any point works
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_cluster(
    embeddings,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ init, deterministic given the seed.

    Empty clusters are re-seeded at the point farthest from its centroid, so
    exactly k clusters always come back.
    """
    x = as_array(embeddings).astype(np.float64)
    n = x.shape[0]
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValidationError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)
    x_sq = (x**2).sum(axis=1)
    assignments = np.zeros(n, dtype=np.int64)
    history = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = x_sq[:, None] - 2.0 * (x @ centroids.T) + (centroids**2).sum(axis=1)[None, :]
        assignments = d2.argmin(axis=1)
        inertia = float(np.maximum(d2[np.arange(n), assignments], 0.0).sum())
        history.append(inertia)
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            members = assignments == j
            if members.any():
                new_centroids[j] = x[members].mean(axis=0)
            else:
                # farthest point from its current centroid takes over the empty slot
                farthest = int(d2[np.arange(n), assignments].argmax())
                new_centroids[j] = x[farthest]
                assignments[farthest] = j
        shift = float(np.linalg.norm(new_centroids - centroids, axis=1).max())
        centroids = new_centroids
        if shift < tol:
            break
    d2 = x_sq[:, None] - 2.0 * (x @ centroids.T) + (centroids**2).sum(axis=1)[None, :]
    assignments = d2.argmin(axis=1)
    inertia = float(np.maximum(d2[np.arange(n), assignments], 0.0).sum())
    history.append(inertia)
    return ClusteringResult(
        assignments=assignments.astype(np.int64),
        centroids=centroids,
        inertia=inertia,
        iterations=iterations,
        inertia_history=tuple(history),
    )


def map_clusters_to_attributes(assignments, reference) -> tuple[tuple, np.ndarray, float]:
    """Brute-force the cluster -> attribute permutation maximizing agreement.

    Returns (permutation, relabeled assignments, accuracy); permutation[c] is
    the attribute index assigned to cluster c. Ties pick the lexicographically
    smallest permutation.
    """
    a = np.asarray(assignments, dtype=np.int64)
    r = np.asarray(reference, dtype=np.int64)
    if a.shape != r.shape:
        raise ValidationError("assignments and reference must align")
    k = int(a.max()) + 1
    values = int(r.max()) + 1
    if k != values:
        raise ValidationError(f"cluster count {k} != attribute value count {values}")
    if k > 8:
        raise ValidationError(f"permutation search supports at most 8 values, got {k}")
    # contingency[c, v] = how many cluster-c samples carry reference value v
    contingency = np.zeros((k, k), dtype=np.int64)
    np.add.at(contingency, (a, r), 1)
    best_perm, best_hits = None, -1
    for perm in itertools.permutations(range(k)):
        hits = int(sum(contingency[c, perm[c]] for c in range(k)))
        if hits > best_hits:
            best_perm, best_hits = perm, hits
    mapped = np.asarray(best_perm, dtype=np.int64)[a]
    return best_perm, mapped, best_hits / len(a)


def erm_confidence_annotate(
    probs: np.ndarray,
    samples: SampleTable,
    num_attrs: int,
    mask=None,
    zs_reference=None,
) -> np.ndarray:
    """Label majority/minority pseudo-attributes from an ERM model's hits.

    Within each class, samples the ERM model classifies correctly get that
    class's "majority" attribute, the rest the "minority" one. The concrete
    attribute indices come from the pairing that agrees best with zero-shot
    attribute labels when provided, else from class parity (an arbitrary but
    documented fallback; downstream training only needs the group structure).
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = samples.y if mask is None else samples.y[np.asarray(mask, dtype=bool)]
    if probs.shape[0] != y.shape[0]:
        raise ValidationError("probability rows must align with the selected samples")
    preds = probs.argmax(axis=1)
    correct = preds == y
    if zs_reference is not None:
        zs_reference = np.asarray(zs_reference, dtype=np.int64)
        if zs_reference.shape != y.shape:
            raise ValidationError("zero-shot reference must align with the selected samples")
    out = np.empty(y.shape[0], dtype=np.int64)
    for cls in np.unique(y):
        members = y == cls
        if not members.any():
            warnings.warn(f"class {cls} has no samples; skipped", stacklevel=2)
            continue
        maj_fallback = int(cls) % num_attrs
        min_fallback = (maj_fallback + 1) % num_attrs
        if zs_reference is None:
            maj, mino = maj_fallback, min_fallback
        else:
            maj, mino, best = maj_fallback, min_fallback, -1
            for a, b in itertools.permutations(range(num_attrs), 2):
                cand = np.where(correct[members], a, b)
                hits = int((cand == zs_reference[members]).sum())
                if hits > best:
                    maj, mino, best = a, b, hits
        out[members] = np.where(correct[members], maj, mino)
    return out


@dataclass(frozen=True)
class AnnotationQualityReport:
    """Attribute-prediction accuracy per true group, worst case, and overall."""

    group_accuracy: dict
    worst_group: float
    overall: float
    permutation: tuple

    def __post_init__(self):
        # worst is the min of the per-group accuracies whose size-weighted
        # mean is overall; allow one rounding ulp of slack
        if not (0.0 <= self.worst_group <= self.overall + 1e-12 and self.overall <= 1.0):
            raise ValidationError("accuracies must satisfy 0 <= worst <= overall <= 1")


def annotation_quality(
    pseudo,
    samples: SampleTable,
    num_attrs: int,
    mask=None,
    align_permutation: bool = False,
) -> AnnotationQualityReport:
    """Score pseudo-attributes against s_true within each true group.

    ``align_permutation`` first maps pseudo label values onto attribute
    indices by the best-agreement permutation (for cluster-style annotators
    whose label values carry no attribute meaning).
    """
    pseudo = np.asarray(pseudo, dtype=np.int64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        y, s_true = samples.y[mask], samples.s_true[mask]
    else:
        y, s_true = samples.y, samples.s_true
    if pseudo.shape != y.shape:
        raise ValidationError("pseudo labels must align with the scored rows")
    if np.any(s_true < 0):
        raise ValidationError("annotation quality needs s_true for every scored row")
    perm = tuple(range(num_attrs))
    if align_permutation:
        perm, pseudo, _ = map_clusters_to_attributes(pseudo, s_true)
    groups = y * num_attrs + s_true
    hits = pseudo == s_true
    group_accuracy = {}
    for g in np.unique(groups):
        members = groups == g
        group_accuracy[int(g)] = float(hits[members].mean())
    worst = min(group_accuracy.values())
    overall = float(hits.mean())
    return AnnotationQualityReport(
        group_accuracy=group_accuracy,
        worst_group=worst,
        overall=overall,
        permutation=perm,
    )
