"""Image/text encoders behind one small interface.

``HFClipEncoder`` wraps a Hugging Face CLIP checkpoint (torch + transformers,
weights must be obtainable). ``StubEncoder`` is a deterministic offline stand-in
keyed on pixel/text content, used by the test suite and smoke runs: it has no
semantics, but it exercises the full pipeline byte-for-byte reproducibly.
"""

from __future__ import annotations

import hashlib

import numpy as np

MODEL_ALIASES = {
    "vit-l-14": "openai/clip-vit-large-patch14",
    "vit-b-32": "openai/clip-vit-base-patch32",
    "vit-b-16": "openai/clip-vit-base-patch16",
}


def resolve_encoder(model: str):
    """Map a --model string to an encoder instance.

    "stub-<d>" builds the offline stub; aliases map to openai CLIP checkpoints;
    anything else is treated as a Hugging Face model id.
    """
    if model.startswith("stub-"):
        return StubEncoder(d=int(model.split("-", 1)[1]))
    return HFClipEncoder(MODEL_ALIASES.get(model, model))


class StubEncoder:
    """Deterministic content-hash embeddings; no ML dependencies."""

    def __init__(self, d: int = 64):
        if d < 2:
            raise ValueError("stub dimension must be >= 2")
        self.d = d
        self.name = f"stub-{d}"

    def _from_bytes(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        vec = np.random.default_rng(seed).standard_normal(self.d)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode_images(self, images) -> np.ndarray:
        out = np.empty((len(images), self.d), dtype=np.float32)
        for i, image in enumerate(images):
            small = image.resize((16, 16))
            out[i] = self._from_bytes(small.tobytes())
        return out

    def encode_texts(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.d), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = self._from_bytes(text.encode("utf-8"))
        return out


class HFClipEncoder:
    """Frozen CLIP checkpoint; central crop + resize to 224 via the processor."""

    def __init__(self, model_id: str, device: str | None = None):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self.name = model_id
        self._torch = torch
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.model = CLIPModel.from_pretrained(model_id).to(self.device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.d = self.model.config.projection_dim

    def encode_images(self, images) -> np.ndarray:
        torch = self._torch
        inputs = self.processor(images=images, return_tensors="pt").to(self.device)
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, texts) -> np.ndarray:
        torch = self._torch
        inputs = self.processor(
            text=list(texts), return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)
