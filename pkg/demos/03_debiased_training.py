"""Train the four methods on the same spurious data and compare robustness.

ERM happily exploits the spurious attribute and collapses on minority groups.
Group-balanced weighting (the eta=0 special case) fixes most of that. The
dynamic re-weighting scheme additionally up-weights whichever group the model
currently finds hard, re-estimated every batch and smoothed with an EMA, and
needs only pseudo-annotated groups. GDRO is the classic oracle-annotation
baseline.
"""

import numpy as np

from grouprobe import (
    SynthConfig,
    annotate_attributes,
    eval_report,
    form_groups,
    gen_spurious_dataset,
)
from grouprobe.tensor_io import DatasetBundle
from grouprobe.trainer import TrainConfig, train

SEEDS = (0, 1, 2)


def run(method, seed, eta=5.0, group_source="pseudo"):
    bundle = gen_spurious_dataset(SynthConfig(seed=seed))
    s_hat = annotate_attributes(bundle.images, bundle.prompts.attr_embeddings)
    bundle = DatasetBundle(bundle.images, bundle.samples.with_pseudo(s_hat), bundle.prompts)
    groups = None
    if method != "erm":
        groups = form_groups(
            bundle.samples, 2, source=group_source, num_classes=2,
            mask=bundle.samples.split_mask("train"),
        )
    head, _ = train(bundle, groups, TrainConfig(method=method, eta=eta, seed=seed))
    return eval_report(head, bundle, "test", group_source="true")


jobs = [
    ("erm", dict()),
    ("group-balanced", dict(eta=0.0)),
    ("dpt", dict(eta=5.0)),
    ("gdro (true groups)", dict(group_source="true")),
]

print(f"{'method':<20} {'WG':>7} {'Avg':>7} {'Gap':>7}   (test, mean over {len(SEEDS)} seeds)")
for label, kw in jobs:
    method = label.split()[0]
    reports = [run(method, seed, **kw) for seed in SEEDS]
    wg = np.mean([r.wg for r in reports])
    avg = np.mean([r.avg for r in reports])
    gap = np.mean([r.gap for r in reports])
    print(f"{label:<20} {100*wg:7.1f} {100*avg:7.1f} {100*gap:7.1f}")

print()
print("ERM buys overall accuracy with minority-group failure; the dynamic")
print("re-weighting closes most of the gap using only pseudo-groups, matching")
print("what GDRO needs true annotations for.")
