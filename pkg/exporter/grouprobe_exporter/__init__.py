"""Embedding exporter: encode real datasets and prompt texts with a frozen
vision-language model, writing grouprobe-format bundles."""

from .encoders import HFClipEncoder, StubEncoder, resolve_encoder
from .pipeline import (
    ExportSpec,
    center_crop_224,
    export_images,
    export_prompts,
    read_metadata,
    run_export,
    zero_shot_accuracy,
)

__version__ = "0.1.0"
