import numpy as np
import pytest

from grouprobe.tensor_io import (
    DatasetBundle,
    EmbeddingMatrix,
    PromptBank,
    SampleTable,
    default_manifest,
)


def tiny_bundle(n_per_group=4, d=6, seed=0, sigma=0.0):
    """Hand-built 2x2-group bundle: class dirs e0/e1, attribute dirs e2/e3."""
    rng = np.random.default_rng(seed)
    u = np.eye(d)[:2]
    v = np.eye(d)[2:4]
    rows, ys, ss, splits, ids = [], [], [], [], []
    i = 0
    for split in ("train", "val", "test"):
        for y in (0, 1):
            for s in (0, 1):
                for _ in range(n_per_group):
                    x = u[y] + 1.5 * v[s] + sigma * rng.standard_normal(d)
                    rows.append(x / np.linalg.norm(x))
                    ys.append(y)
                    ss.append(s)
                    splits.append(split)
                    ids.append(f"{split}-{i:04d}")
                    i += 1
    samples = SampleTable(ids, ys, ss, splits, [-1] * len(ids))
    prompts = PromptBank(
        EmbeddingMatrix(u, normalized=True),
        EmbeddingMatrix(v, normalized=True),
        default_manifest(2, 2),
    )
    return DatasetBundle(EmbeddingMatrix(np.array(rows)), samples, prompts)


@pytest.fixture
def small_bundle():
    return tiny_bundle()
