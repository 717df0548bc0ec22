import json

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def tiny_dataset(tmp_path):
    """12 small images with metadata plus prompt template files."""
    rng = np.random.default_rng(0)
    root = tmp_path / "data"
    (root / "images").mkdir(parents=True)
    rows = ["id,path,y,s_true,split"]
    i = 0
    for split, count in (("train", 6), ("val", 3), ("test", 3)):
        for _ in range(count):
            y, s = i % 2, (i // 2) % 2
            pixels = rng.integers(0, 255, size=(32, 48, 3), dtype=np.uint8)
            name = f"images/img_{i:03d}.png"
            Image.fromarray(pixels).save(root / name)
            rows.append(f"img{i:03d},{name},{y},{s},{split}")
            i += 1
    meta = tmp_path / "meta.csv"
    meta.write_text("\n".join(rows) + "\n", encoding="utf-8")

    class_prompts = tmp_path / "class.json"
    class_prompts.write_text(
        json.dumps([["a photo of a landbird", "a picture of a landbird"], "a photo of a waterbird"]),
        encoding="utf-8",
    )
    attr_prompts = tmp_path / "attr.json"
    attr_prompts.write_text(
        json.dumps(["a photo of a bird in a forest", "a photo of a bird on water"]),
        encoding="utf-8",
    )
    return {"root": root, "meta": meta, "class_prompts": class_prompts, "attr_prompts": attr_prompts}
