"""Synthetic spuriously-correlated embedding bundles with known ground truth,
plus a Monte Carlo Bayes oracle bounding what any classifier can achieve.

Each sample is ``normalize(alpha * u_y + beta * v_s + sigma * eps)`` where the
class directions u and attribute directions v are mutually orthonormal, and
the attribute s agrees with the class ("majority" group) with probability rho.
Class prompts are the u rows and attribute prompts the v rows, so annotation
difficulty is controlled entirely by sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor_io import (
    DatasetBundle,
    EmbeddingMatrix,
    PromptBank,
    PromptEntry,
    SampleTable,
)

_ORACLE_SEED_OFFSET = 7_654_321  # keep oracle draws independent of the dataset draws


@dataclass(frozen=True)
class SynthConfig:
    d: int = 64
    n_train: int = 2000
    n_val: int = 1000
    n_test: int = 2000
    num_classes: int = 2
    num_attrs: int = 2
    rho: float = 0.95
    alpha: float = 1.0
    beta: float = 1.5
    sigma: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.d < self.num_classes + self.num_attrs:
            raise ValidationError(
                f"d={self.d} too small to orthogonalize {self.num_classes}+{self.num_attrs} directions"
            )
        if not 0.5 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0.5, 1), got {self.rho}")
        if self.num_classes < 2 or self.num_attrs < 2:
            raise ValidationError("need at least 2 classes and 2 attributes")
        # alpha/beta/sigma = 0 are legitimate degenerate corners (pure-spurious
        # or noiseless data); negative strengths are not
        if self.alpha < 0 or self.beta < 0 or self.sigma < 0:
            raise ValidationError("alpha, beta and sigma must be >= 0")
        if self.alpha == 0 and self.beta == 0:
            raise ValidationError("alpha and beta cannot both be 0")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValidationError("every split needs at least one sample")

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_attrs

    def group_prior(self, balanced: bool = False) -> np.ndarray:
        """pi(y, s) flattened as g = y * num_attrs + s."""
        if balanced:
            return np.full(self.num_groups, 1.0 / self.num_groups)
        prior = np.empty(self.num_groups)
        off = (1.0 - self.rho) / (self.num_attrs - 1)
        for y in range(self.num_classes):
            for s in range(self.num_attrs):
                p = self.rho if s == y % self.num_attrs else off
                prior[y * self.num_attrs + s] = p / self.num_classes
        return prior


def orthonormal_directions(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    """``count`` exactly orthonormal rows from a seeded Gaussian draw (QR)."""
    if count > d:
        raise ValidationError(f"cannot fit {count} orthonormal directions in {d} dims")
    g = rng.standard_normal((d, count))
    q, r = np.linalg.qr(g)
    # fix QR sign ambiguity so the draw alone determines the directions
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def _draw_attributes(rng, y, cfg: SynthConfig) -> np.ndarray:
    aligned = y % cfg.num_attrs
    take_aligned = rng.random(y.shape[0]) < cfg.rho
    off = rng.integers(0, cfg.num_attrs - 1, size=y.shape[0])
    other = off + (off >= aligned)
    return np.where(take_aligned, aligned, other)


def gen_spurious_dataset(cfg: SynthConfig) -> DatasetBundle:
    """Deterministically generate a full bundle (train/val/test) from a seed."""
    rng = np.random.default_rng(cfg.seed)
    dirs = orthonormal_directions(rng, cfg.num_classes + cfg.num_attrs, cfg.d)
    u = dirs[: cfg.num_classes]
    v = dirs[cfg.num_classes :]

    ids, ys, ss, splits, rows = [], [], [], [], []
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        y = rng.integers(0, cfg.num_classes, size=count)
        s = _draw_attributes(rng, y, cfg)
        eps = rng.standard_normal((count, cfg.d))
        x = cfg.alpha * u[y] + cfg.beta * v[s] + cfg.sigma * eps
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0.0):
            raise ValidationError("a generated sample is the zero vector; increase alpha/beta")
        rows.append(x / norms[:, None])
        ids.extend(f"{split}-{i:06d}" for i in range(count))
        ys.append(y)
        ss.append(s)
        splits.extend([split] * count)

    y_all = np.concatenate(ys)
    s_all = np.concatenate(ss)
    train_groups = y_all[: cfg.n_train] * cfg.num_attrs + s_all[: cfg.n_train]
    sizes = np.bincount(train_groups, minlength=cfg.num_groups)
    if np.any(sizes == 0):
        raise ValidationError(
            f"train split left group(s) {np.flatnonzero(sizes == 0).tolist()} empty; "
            "increase n_train or change the seed"
        )

    samples = SampleTable(
        ids=ids,
        y=y_all,
        s_true=s_all,
        split=splits,
        s_pseudo=np.full(y_all.shape[0], -1, dtype=np.int64),
    )
    manifest = tuple(
        [PromptEntry("class", i, f"synthetic class direction {i}") for i in range(cfg.num_classes)]
        + [PromptEntry("attribute", j, f"synthetic attribute direction {j}") for j in range(cfg.num_attrs)]
    )
    prompts = PromptBank(
        class_embeddings=EmbeddingMatrix(u, normalized=True),
        attr_embeddings=EmbeddingMatrix(v, normalized=True),
        manifest=manifest,
    )
    images = EmbeddingMatrix(np.concatenate(rows, axis=0), normalized=True)
    return DatasetBundle(images=images, samples=samples, prompts=prompts)


@dataclass(frozen=True)
class OracleReport:
    """Per-group accuracy of the Bayes decision rule, with Monte Carlo error."""

    group_accuracy: np.ndarray
    group_counts: np.ndarray
    std_err: np.ndarray
    mc_samples: int
    prior: str

    def __post_init__(self):
        acc = np.asarray(self.group_accuracy, dtype=np.float64)
        if np.any((acc < 0) | (acc > 1)):
            raise ValidationError("group accuracies must lie in [0, 1]")

    @property
    def mean_group_accuracy(self) -> float:
        return float(np.mean(self.group_accuracy))


def _log_radial_likelihood(t: np.ndarray, d: int, sigma: float) -> np.ndarray:
    """log integral_0^inf r^(d-1) exp(-(r^2 - 2 r t) / (2 sigma^2)) dr.

    Log-domain trapezoid around the integrand's peak; constants common to all
    hypotheses are dropped (only differences in t matter downstream).
    """
    t = np.asarray(t, dtype=np.float64)
    var = sigma * sigma
    r_star = 0.5 * (t + np.sqrt(t * t + 4.0 * (d - 1) * var))
    width = 1.0 / np.sqrt((d - 1) / np.maximum(r_star, 1e-12) ** 2 + 1.0 / var)
    lo = np.maximum(r_star - 12.0 * width, 1e-12)
    hi = r_star + 12.0 * width
    steps = 1201
    frac = np.linspace(0.0, 1.0, steps)
    out = np.empty(t.shape)
    chunk = max(1, 2_000_000 // steps)
    for start in range(0, t.shape[0], chunk):
        sl = slice(start, min(start + chunk, t.shape[0]))
        r = lo[sl, None] + (hi - lo)[sl, None] * frac[None, :]
        log_f = (d - 1) * np.log(r) - (r * r - 2.0 * r * t[sl, None]) / (2.0 * var)
        m = log_f.max(axis=1)
        integral = np.trapezoid(np.exp(log_f - m[:, None]), r, axis=1)
        out[sl] = m + np.log(integral)
    return out


_LIKELIHOOD_CACHE: dict = {}


def _likelihood_table(m_norm: float, d: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    key = (round(m_norm, 12), d, round(sigma, 12))
    if key not in _LIKELIHOOD_CACHE:
        grid = np.linspace(-m_norm, m_norm, 8_001)
        _LIKELIHOOD_CACHE[key] = (grid, _log_radial_likelihood(grid, d, sigma))
        if len(_LIKELIHOOD_CACHE) > 16:
            _LIKELIHOOD_CACHE.pop(next(iter(_LIKELIHOOD_CACHE)))
    return _LIKELIHOOD_CACHE[key]


def bayes_decision(x: np.ndarray, cfg: SynthConfig, u: np.ndarray, v: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """MAP class decision for unit-norm samples under the known generative model."""
    means = np.stack(
        [cfg.alpha * u[g // cfg.num_attrs] + cfg.beta * v[g % cfg.num_attrs] for g in range(cfg.num_groups)]
    )
    t = x @ means.T  # n x G
    if cfg.sigma < 1e-9:
        # noiseless limit: the largest alignment wins outright
        best = t.argmax(axis=1)
        return best // cfg.num_attrs
    m_norm = float(np.sqrt(cfg.alpha**2 + cfg.beta**2))
    grid, log_like_grid = _likelihood_table(m_norm, cfg.d, cfg.sigma)
    log_like = np.interp(np.clip(t, -m_norm, m_norm), grid, log_like_grid)
    log_post = log_like + np.log(prior)[None, :]
    # argmax_y logsumexp over the attributes of each class
    per_class = log_post.reshape(x.shape[0], cfg.num_classes, cfg.num_attrs)
    m = per_class.max(axis=2)
    class_score = m + np.log(np.exp(per_class - m[:, :, None]).sum(axis=2))
    return class_score.argmax(axis=1)


def bayes_oracle(
    cfg: SynthConfig,
    mc_samples: int = 40_000,
    prior: str = "train",
    seed: int | None = None,
) -> OracleReport:
    """Stratified Monte Carlo estimate of the Bayes rule's per-group accuracy.

    Groups are sampled equally (the prior only shapes the decision rule), so
    minority groups get the same Monte Carlo resolution as majority ones.
    """
    if mc_samples < 10_000:
        raise ValidationError("need at least 10**4 Monte Carlo samples")
    if prior not in ("train", "balanced"):
        raise ValidationError(f"prior must be 'train' or 'balanced', got {prior!r}")
    rng = np.random.default_rng(cfg.seed + _ORACLE_SEED_OFFSET if seed is None else seed)
    dirs = orthonormal_directions(np.random.default_rng(cfg.seed), cfg.num_classes + cfg.num_attrs, cfg.d)
    u, v = dirs[: cfg.num_classes], dirs[cfg.num_classes :]
    pi = cfg.group_prior(balanced=(prior == "balanced"))

    per_group = mc_samples // cfg.num_groups
    acc = np.empty(cfg.num_groups)
    counts = np.full(cfg.num_groups, per_group, dtype=np.int64)
    for g in range(cfg.num_groups):
        y, s = g // cfg.num_attrs, g % cfg.num_attrs
        x = cfg.alpha * u[y] + cfg.beta * v[s] + cfg.sigma * rng.standard_normal((per_group, cfg.d))
        x = x / np.linalg.norm(x, axis=1)[:, None]
        decided = bayes_decision(x, cfg, u, v, pi)
        acc[g] = float((decided == y).mean())
    std_err = np.sqrt(np.maximum(acc * (1.0 - acc), 1e-12) / counts)
    return OracleReport(
        group_accuracy=acc,
        group_counts=counts,
        std_err=std_err,
        mc_samples=mc_samples,
        prior=prior,
    )
