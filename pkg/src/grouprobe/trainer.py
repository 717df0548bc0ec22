"""Classifier-head training over frozen embeddings with dynamic group re-weighting.

The head is a set of K unit-norm class vectors scored by scaled cosine
similarity, warm-startable from class prompt embeddings. Group weights follow
the difficulty rule

    w_hat_g  propto  (1/N_g) * exp(eta * (1 - pbar_g))        (difficulty)
    w_hat_g  <-  w_hat_g / sum_{k in class} w_hat_k * N_k     (class mass = 1)
    w_g      <-  (1-m) * w_g + m * w_hat_g                    (per-batch EMA)

with eta = 0 reducing to plain group balancing. ERM, fixed group-balanced
weights, and online exponentiated-ascent GDRO ride the same loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .tensor_io import (
    DatasetBundle,
    EmbeddingMatrix,
    PromptBank,
    as_array,
    read_embeddings,
    write_embeddings,
)
from .zeroshot import DEFAULT_SCALE, GroupAssignment, softmax_probs

METHODS = ("erm", "group-balanced", "dpt", "gdro")


@dataclass(frozen=True)
class ClassifierHead:
    """K learnable class vectors in the embedding space; rows kept unit norm."""

    theta: np.ndarray
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 2:
            raise ValidationError("theta must be a K x d matrix")
        if not np.all(np.isfinite(t)):
            raise ValidationError("theta contains non-finite values")
        if self.scale < 0:
            raise ValidationError("scale must be nonnegative")
        object.__setattr__(self, "theta", t)

    @property
    def num_classes(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"{what} has a zero-norm row")
    return m / norms[:, None]


def forward_probs(head: ClassifierHead, batch) -> np.ndarray:
    """Softmax over scale * cosine(x, theta_j); rows sum to 1 within 1e-12."""
    x = as_array(batch).astype(np.float64)
    if x.shape[1] != head.d:
        raise ValidationError(f"batch d={x.shape[1]} does not match head d={head.d}")
    logits = head.scale * (_normalize_rows(x, "batch") @ _normalize_rows(head.theta, "theta").T)
    return softmax_probs(logits)


def _logits_and_norms(head: ClassifierHead, x: np.ndarray):
    x_hat = _normalize_rows(x, "batch")
    theta_norms = np.linalg.norm(head.theta, axis=1)
    if np.any(theta_norms == 0.0):
        raise DegenerateInputError("theta has a zero-norm row")
    theta_hat = head.theta / theta_norms[:, None]
    cos = x_hat @ theta_hat.T
    return x_hat, theta_hat, theta_norms, cos


def weighted_loss(head: ClassifierHead, batch, labels, weights) -> float:
    """Sum_i w_i * cross_entropy_i, computed in log-sum-exp form (never inf)."""
    x = as_array(batch).astype(np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if not (x.shape[0] == y.shape[0] == w.shape[0]):
        raise ValidationError("batch, labels and weights must align")
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    _, _, _, cos = _logits_and_norms(head, x)
    z = head.scale * cos
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    per_sample = lse - z[np.arange(len(y)), y]
    return float(w @ per_sample)


def loss_gradient(head: ClassifierHead, batch, labels, weights) -> np.ndarray:
    """Analytic gradient of weighted_loss w.r.t. theta.

    Includes the cosine normalization Jacobian: for unit-norm theta rows the
    gradient is orthogonal to the row itself.
    """
    x = as_array(batch).astype(np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    x_hat, theta_hat, theta_norms, cos = _logits_and_norms(head, x)
    probs = softmax_probs(head.scale * cos)
    g = probs.copy()
    g[np.arange(len(y)), y] -= 1.0
    g *= w[:, None]  # dL/dz, n x K
    along_x = g.T @ x_hat  # K x d
    along_theta = (g * cos).sum(axis=0)  # K
    grad = (along_x - along_theta[:, None] * theta_hat) * (head.scale / theta_norms)[:, None]
    return grad


@dataclass(frozen=True)
class GroupBatchStats:
    """Per-group batch count and mean true-class probability."""

    counts: np.ndarray
    mean_true_prob: np.ndarray  # valid only where present
    present: np.ndarray  # boolean mask

    @property
    def absent_groups(self) -> np.ndarray:
        return np.flatnonzero(~self.present)


def batch_group_stats(probs, labels, groups, num_groups: int) -> GroupBatchStats:
    """Tally count and mean p_hat_y per group; absent groups are flagged."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    g = np.asarray(groups, dtype=np.int64)
    if not (probs.shape[0] == y.shape[0] == g.shape[0]):
        raise ValidationError("probs, labels and groups must align")
    p_true = probs[np.arange(len(y)), y]
    counts = np.bincount(g, minlength=num_groups).astype(np.int64)
    sums = np.bincount(g, weights=p_true, minlength=num_groups)
    present = counts > 0
    mean = np.zeros(num_groups)
    mean[present] = sums[present] / counts[present]
    return GroupBatchStats(counts=counts, mean_true_prob=mean, present=present)


def raw_group_weights(pbar, sizes, eta: float, class_of_group, mask=None) -> np.ndarray:
    """Difficulty weights (1/N_g) * exp(eta * (1 - pbar_g)), overflow-safe.

    The within-class maximum of eta*(1-pbar) is subtracted before
    exponentiation; the shift cancels under class normalization, so even
    eta ~ 1000 stays finite. ``mask`` marks the scored groups.
    """
    pbar = np.asarray(pbar, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    cls = np.asarray(class_of_group, dtype=np.int64)
    if eta < 0:
        raise ValidationError(f"eta must be >= 0, got {eta}")
    if mask is None:
        mask = np.ones(pbar.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    if np.any(sizes[mask] < 1):
        raise ValidationError("every scored group needs N_g >= 1")
    if np.any((pbar[mask] < 0) | (pbar[mask] > 1)):
        raise ValidationError("pbar must lie in [0, 1]")
    a = eta * (1.0 - pbar)
    out = np.zeros_like(pbar)
    for c in np.unique(cls):
        scored = mask & (cls == c)
        if not scored.any():
            continue
        shifted = a[scored] - a[scored].max()
        out[scored] = np.exp(shifted) / sizes[scored]
    return out


def class_normalize(w_hat, sizes, class_of_group, mask=None, class_mass=None) -> np.ndarray:
    """Rescale weights so each class's total sample mass sum_g w_g*N_g is 1.

    ``class_mass`` overrides the per-class target mass (used mid-training when
    groups absent from the batch hold part of a class's mass).
    """
    w_hat = np.asarray(w_hat, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    cls = np.asarray(class_of_group, dtype=np.int64)
    if mask is None:
        mask = np.ones(w_hat.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(w_hat)
    for c in np.unique(cls):
        scored = mask & (cls == c)
        if not scored.any():
            continue
        denom = float(w_hat[scored] @ sizes[scored])
        if denom <= 0.0:
            raise DegenerateInputError(f"class {c} has zero total weight, cannot normalize")
        target = 1.0 if class_mass is None else float(class_mass[c])
        out[scored] = w_hat[scored] * (target / denom)
    return out


def ema_update(w, w_hat, m: float, mask=None) -> np.ndarray:
    """w <- (1-m)*w + m*w_hat on the masked groups; exact at the fixed point."""
    if not 0.0 < m <= 1.0:
        raise ValidationError(f"momentum m must lie in (0, 1], got {m}")
    w = np.asarray(w, dtype=np.float64).copy()
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if mask is None:
        mask = np.ones(w.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    if m == 1.0:
        w[mask] = w_hat[mask]
    else:
        w[mask] = w[mask] + m * (w_hat[mask] - w[mask])
    return w


def group_balanced_weights(sizes, class_of_group) -> np.ndarray:
    """The eta = 0 solution: w_g = 1 / (N_g * number of groups in the class)."""
    sizes = np.asarray(sizes, dtype=np.float64)
    uniform_pbar = np.full(sizes.shape, 0.5)
    raw = raw_group_weights(uniform_pbar, sizes, 0.0, class_of_group)
    return class_normalize(raw, sizes, class_of_group)


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Cosine decay from lr_start at step 0 to lr_end at step == total_steps."""
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


class GroupWeightState:
    """EMA-smoothed per-group training weights plus dataset group sizes.

    Maintains: all weights positive, and within each class the sample mass
    sum_g w_g * N_g equal to 1 (exactly preserved by updates even when some
    groups are absent from a batch: absent groups keep their weight and the
    present ones share the remaining class mass).
    """

    def __init__(self, sizes, class_of_group, eta: float, momentum: float = 0.3):
        if eta < 0:
            raise ValidationError(f"eta must be >= 0, got {eta}")
        if not 0.0 < momentum <= 1.0:
            raise ValidationError(f"momentum must lie in (0, 1], got {momentum}")
        self.sizes = np.asarray(sizes, dtype=np.float64)
        self.class_of_group = np.asarray(class_of_group, dtype=np.int64)
        self.eta = float(eta)
        self.momentum = float(momentum)
        self.w = group_balanced_weights(self.sizes, self.class_of_group)

    def update_from_batch(self, stats: GroupBatchStats) -> np.ndarray:
        present = stats.present & (self.sizes > 0)
        if not present.any():
            return self.w
        raw = raw_group_weights(
            stats.mean_true_prob, self.sizes, self.eta, self.class_of_group, mask=present
        )
        # mass not held by groups missing from this batch, per class
        n_classes = int(self.class_of_group.max()) + 1
        class_mass = np.ones(n_classes)
        for c in range(n_classes):
            absent = (~present) & (self.class_of_group == c)
            class_mass[c] = 1.0 - float(self.w[absent] @ self.sizes[absent])
        w_hat = class_normalize(
            raw, self.sizes, self.class_of_group, mask=present, class_mass=class_mass
        )
        self.w = ema_update(self.w, w_hat, self.momentum, mask=present)
        return self.w

    def check_mass(self, tol: float = 1e-9) -> None:
        for c in np.unique(self.class_of_group):
            members = self.class_of_group == c
            mass = float(self.w[members] @ self.sizes[members])
            if abs(mass - 1.0) > tol:
                raise ValidationError(f"class {c} weight mass {mass} deviates from 1")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "dpt"
    eta: float = 5.0
    momentum: float = 0.3
    scale: float = DEFAULT_SCALE
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    gdro_step: float = 0.01
    init: str = "random"  # "random" | "prompt" warm start from class prompts
    select: str = "final"  # "final" | "best-val-wg"
    debug_checks: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError("need lr_start >= lr_end > 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.eta < 0:
            raise ValidationError("eta must be >= 0")
        if not 0.0 < self.momentum <= 1.0:
            raise ValidationError("momentum must lie in (0, 1]")
        if self.init not in ("prompt", "random"):
            raise ValidationError(f"init must be 'prompt' or 'random', got {self.init!r}")
        if self.select not in ("final", "best-val-wg"):
            raise ValidationError(f"select must be 'final' or 'best-val-wg', got {self.select!r}")


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    val_group_accuracy: list = field(default_factory=list)  # per epoch: list (None = absent)
    val_worst_group: list = field(default_factory=list)
    weight_trajectory: list = field(default_factory=list)  # (epoch, batch, w copy)
    selected_epoch: int = -1
    checkpoint_path: str | None = None


def init_head(
    num_classes: int,
    d: int,
    scale: float = DEFAULT_SCALE,
    seed: int = 0,
    prompts=None,
) -> ClassifierHead:
    """Warm-start from class prompt embeddings, or draw random unit rows."""
    if prompts is not None:
        if isinstance(prompts, PromptBank):
            rows = prompts.class_embeddings.values
        else:
            rows = as_array(prompts)
        if rows.shape[0] != num_classes:
            raise ValidationError(
                f"prompt bank has {rows.shape[0]} classes, head expects {num_classes}"
            )
        theta = _normalize_rows(rows.astype(np.float64), "class prompts")
    else:
        rng = np.random.default_rng(seed)
        theta = _normalize_rows(rng.standard_normal((num_classes, d)), "random init")
    return ClassifierHead(theta=theta, scale=scale)


def train(
    bundle: DatasetBundle,
    groups: GroupAssignment | None,
    cfg: TrainConfig,
    val_groups: GroupAssignment | None = None,
    weight_override=None,
) -> tuple[ClassifierHead, TrainReport]:
    """Run the seeded SGD loop and return the trained head plus a report.

    ``groups`` must cover the train split for dpt/group-balanced/gdro; ERM
    ignores it. ``val_groups`` (over the val split) enables per-epoch
    worst-group tracking and the "best-val-wg" selection rule.
    ``weight_override`` freezes the per-group weight vector (no updates),
    which reduces any method to a fixed-weight run.
    """
    samples = bundle.samples
    train_mask = samples.split_mask("train")
    n_train = int(train_mask.sum())
    if n_train == 0:
        raise ValidationError("bundle has no train rows")
    x_all = bundle.images.values.astype(np.float64)
    x_train = x_all[train_mask]
    y_train = samples.y[train_mask]
    num_classes = bundle.prompts.num_classes

    needs_groups = cfg.method != "erm" or weight_override is not None
    if needs_groups and groups is None:
        raise ValidationError(f"method {cfg.method!r} requires group assignments")
    if groups is not None and groups.g.shape[0] != n_train:
        raise ValidationError("group assignment must cover exactly the train rows")

    head = init_head(
        num_classes,
        bundle.images.d,
        scale=cfg.scale,
        seed=cfg.seed,
        prompts=bundle.prompts if cfg.init == "prompt" else None,
    )
    theta = head.theta.copy()

    g_train = groups.g if groups is not None else None
    num_groups = groups.num_groups if groups is not None else None
    state = None
    w_group = None
    q = None
    if weight_override is not None:
        w_group = np.asarray(weight_override, dtype=np.float64).copy()
        if w_group.shape != (num_groups,):
            raise ValidationError("weight_override must give one weight per group")
    elif cfg.method == "group-balanced":
        w_group = group_balanced_weights(groups.sizes, groups.class_of_group())
    elif cfg.method == "dpt":
        state = GroupWeightState(
            groups.sizes, groups.class_of_group(), eta=cfg.eta, momentum=cfg.momentum
        )
        w_group = state.w
    elif cfg.method == "gdro":
        q = np.full(num_groups, 1.0 / num_groups)
        w_group = num_classes * q / np.maximum(groups.sizes, 1)

    val_mask = samples.split_mask("val")
    track_val = val_mask.any() and val_groups is not None
    if track_val:
        x_val = x_all[val_mask]
        y_val = samples.y[val_mask]

    rng = np.random.default_rng(cfg.seed)
    batches_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    report = TrainReport()
    best_wg, best_theta, best_epoch = -1.0, None, -1
    step = 0

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            cur = ClassifierHead(theta=theta, scale=cfg.scale)
            probs = forward_probs(cur, xb)

            if g_train is not None:
                gb = g_train[idx]
                stats = batch_group_stats(probs, yb, gb, num_groups)
                if weight_override is None:
                    if cfg.method == "dpt":
                        w_group = state.update_from_batch(stats)
                        if cfg.debug_checks:
                            state.check_mass()
                    elif cfg.method == "gdro":
                        p_true = probs[np.arange(len(yb)), yb]
                        losses = -np.log(np.maximum(p_true, 1e-300))
                        for grp in np.flatnonzero(stats.present):
                            mean_loss = float(losses[gb == grp].mean())
                            q[grp] *= math.exp(cfg.gdro_step * mean_loss)
                        q /= q.sum()
                        w_group = num_classes * q / np.maximum(groups.sizes, 1)
                if w_group is not None:
                    weights = w_group[gb]
                    report.weight_trajectory.append((epoch, b, w_group.copy()))
                else:
                    weights = np.full(len(idx), num_classes / n_train)
            else:
                weights = np.full(len(idx), num_classes / n_train)

            # scale batch sum up to the full-dataset sum convention
            batch_scale = n_train / len(idx)
            grad = loss_gradient(cur, xb, yb, weights * batch_scale)
            loss = weighted_loss(cur, xb, yb, weights * batch_scale)
            epoch_loss += loss
            lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end)
            theta = theta - lr * grad
            theta = _normalize_rows(theta, "theta after step")
            step += 1
        report.epoch_losses.append(epoch_loss / batches_per_epoch)

        if track_val:
            cur = ClassifierHead(theta=theta, scale=cfg.scale)
            preds = forward_probs(cur, x_val).argmax(axis=1)
            accs, wg = _grouped_accuracy(preds, y_val, val_groups)
            report.val_group_accuracy.append(accs)
            report.val_worst_group.append(wg)
            if wg > best_wg:
                best_wg, best_theta, best_epoch = wg, theta.copy(), epoch
        else:
            report.val_group_accuracy.append(None)
            report.val_worst_group.append(None)

    if cfg.select == "best-val-wg":
        if best_theta is None:
            raise ValidationError("best-val-wg selection needs val rows and val_groups")
        theta = best_theta
        report.selected_epoch = best_epoch
    else:
        report.selected_epoch = cfg.epochs - 1
    return ClassifierHead(theta=theta, scale=cfg.scale), report


def _grouped_accuracy(preds, labels, groups: GroupAssignment):
    hits = (preds == labels).astype(np.float64)
    accs = []
    for grp in range(groups.num_groups):
        members = groups.g == grp
        accs.append(float(hits[members].mean()) if members.any() else None)
    wg = min(a for a in accs if a is not None)
    return accs, wg


def save_head(head: ClassifierHead, base_path, meta: dict | None = None) -> None:
    """Write <base>.emb (theta, tensor format) and <base>.json (metadata)."""
    base = Path(base_path)
    write_embeddings(EmbeddingMatrix(head.theta, normalized=True), base.with_suffix(".emb"))
    sidecar = {
        "scale": head.scale,
        "num_classes": head.num_classes,
        "d": head.d,
    }
    sidecar.update(meta or {})
    base.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_head(base_path) -> tuple[ClassifierHead, dict]:
    base = Path(base_path)
    theta = read_embeddings(base.with_suffix(".emb")).values
    meta = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    return ClassifierHead(theta=theta, scale=float(meta["scale"])), meta


__all__ = [
    "ClassifierHead",
    "GroupBatchStats",
    "GroupWeightState",
    "TrainConfig",
    "TrainReport",
    "batch_group_stats",
    "class_normalize",
    "cosine_lr",
    "ema_update",
    "forward_probs",
    "group_balanced_weights",
    "init_head",
    "load_head",
    "loss_gradient",
    "raw_group_weights",
    "save_head",
    "train",
    "weighted_loss",
]
