"""Group-robustness evaluation: per-group accuracy, worst-group (WG), overall
accuracy (Avg) and the robustness gap (Gap = Avg - WG)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor_io import DatasetBundle
from .trainer import ClassifierHead, forward_probs
from .zeroshot import form_groups


def per_group_accuracy(predictions, labels, groups, num_groups: int) -> tuple[list, np.ndarray]:
    """Accuracy within each group; empty groups are None, never 0."""
    preds = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    g = np.asarray(groups, dtype=np.int64)
    if not (preds.shape == y.shape == g.shape):
        raise ValidationError("predictions, labels and groups must align")
    hits = (preds == y).astype(np.float64)
    sizes = np.bincount(g, minlength=num_groups).astype(np.int64)
    accs: list = []
    for grp in range(num_groups):
        if sizes[grp] == 0:
            accs.append(None)
        else:
            accs.append(float(hits[g == grp].mean()))
    return accs, sizes


@dataclass(frozen=True)
class EvalReport:
    split: str
    group_accs: tuple  # None entries mark absent groups
    group_sizes: tuple
    wg: float
    avg: float
    gap: float
    n_evaluated: int

    def __post_init__(self):
        present = [a for a in self.group_accs if a is not None]
        if not present:
            raise ValidationError("evaluation covered no groups")
        if self.wg != min(present):
            raise ValidationError("wg must equal the minimum per-group accuracy")
        if self.gap != self.avg - self.wg:
            raise ValidationError("gap must equal avg - wg")

    def to_dict(self, **extra) -> dict:
        out = {
            "split": self.split,
            "group_accs": list(self.group_accs),
            "group_sizes": list(self.group_sizes),
            "wg": self.wg,
            "avg": self.avg,
            "gap": self.gap,
            "n_evaluated": self.n_evaluated,
        }
        out.update(extra)
        return out


def report_from_predictions(preds, labels, groups, num_groups: int, split: str) -> EvalReport:
    accs, sizes = per_group_accuracy(preds, labels, groups, num_groups)
    present = [a for a in accs if a is not None]
    wg = min(present)
    avg = float((np.asarray(preds) == np.asarray(labels)).mean())
    return EvalReport(
        split=split,
        group_accs=tuple(accs),
        group_sizes=tuple(int(s) for s in sizes),
        wg=wg,
        avg=avg,
        gap=avg - wg,
        n_evaluated=len(np.asarray(labels)),
    )


def eval_report(
    head: ClassifierHead,
    bundle: DatasetBundle,
    split: str,
    group_source: str = "true",
    balanced_avg: bool = False,
) -> EvalReport:
    """Evaluate a head on one split, grouping by true or pseudo attributes.

    Avg is sample-weighted accuracy over the split by default; with
    ``balanced_avg`` it is the unweighted mean of the per-group accuracies
    (exposed for comparability, not the headline convention).
    """
    mask = bundle.samples.split_mask(split)
    if not mask.any():
        raise ValidationError(f"bundle has no rows in split {split!r}")
    groups = form_groups(
        bundle.samples,
        bundle.prompts.num_attributes,
        source=group_source,
        num_classes=bundle.prompts.num_classes,
        mask=mask,
    )
    x = bundle.images.values[mask]
    y = bundle.samples.y[mask]
    preds = forward_probs(head, x).argmax(axis=1)
    rep = report_from_predictions(preds, y, groups.g, groups.num_groups, split)
    if balanced_avg:
        present = [a for a in rep.group_accs if a is not None]
        avg = float(np.mean(present))
        rep = EvalReport(
            split=rep.split,
            group_accs=rep.group_accs,
            group_sizes=rep.group_sizes,
            wg=rep.wg,
            avg=avg,
            gap=avg - rep.wg,
            n_evaluated=rep.n_evaluated,
        )
    return rep


def format_report_table(rows: list[dict]) -> str:
    """Aligned text table; rows need method/split/wg/avg/gap (None -> em dash)."""
    from decimal import ROUND_HALF_EVEN, Decimal

    def fmt(x):
        if x is None:
            return "—"
        return str(Decimal(repr(float(x) * 100)).quantize(Decimal("0.1"), ROUND_HALF_EVEN))

    header = ["Method", "Split", "WG", "Avg", "Gap"]
    table = [header]
    for r in rows:
        table.append(
            [str(r.get("method", "—")), str(r.get("split", "—")), fmt(r.get("wg")), fmt(r.get("avg")), fmt(r.get("gap"))]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append(" | ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)
