"""Backbone registry and pretrained encoder resolution.

An encoder is anything with a `dim` attribute and the two batch methods
below; extraction accepts injected encoder objects, so the pretrained
runtimes are needed only when a registered backbone name is resolved.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import EncoderError

# Embedding width per supported backbone.
BACKBONE_DIMS = {
    "ResNet-50": 1024,
    "ViT-B/16": 512,
}

_HF_CHECKPOINTS = {
    "ViT-B/16": "openai/clip-vit-base-patch16",
}

_IMAGE_BATCH = 32


@runtime_checkable
class FeatureEncoder(Protocol):
    dim: int

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray: ...

    def encode_texts(self, prompts: Sequence[str]) -> np.ndarray: ...


class HfClipEncoder:
    """Inference-only wrapper over a transformers CLIP checkpoint."""

    def __init__(self, model, processor, dim: int):
        self.model = model
        self.processor = processor
        self.dim = dim
        self.model.eval()

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        import torch
        from PIL import Image

        rows = []
        with torch.no_grad():
            for start in range(0, len(paths), _IMAGE_BATCH):
                batch = [
                    Image.open(p).convert("RGB")
                    for p in paths[start : start + _IMAGE_BATCH]
                ]
                inputs = self.processor(images=batch, return_tensors="pt")
                rows.append(self.model.get_image_features(**inputs).cpu().numpy())
        return np.concatenate(rows, axis=0).astype(np.float32)

    def encode_texts(self, prompts: Sequence[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            inputs = self.processor(
                text=list(prompts), return_tensors="pt", padding=True
            )
            out = self.model.get_text_features(**inputs).cpu().numpy()
        return out.astype(np.float32)


def resolve_encoder(backbone: str) -> FeatureEncoder:
    """Build the pretrained encoder for a registered backbone name.

    Raises EncoderError naming the missing runtime or checkpoint when the
    pretrained path cannot be constructed; callers that already have
    features can inject their own encoder instead.
    """
    if backbone not in BACKBONE_DIMS:
        raise EncoderError(
            f"unknown backbone '{backbone}'; supported: "
            + ", ".join(sorted(BACKBONE_DIMS))
        )
    if backbone == "ResNet-50":
        # The ResNet CLIP tower is not in transformers; it needs open_clip.
        try:
            import open_clip  # noqa: F401
        except ImportError as exc:
            raise EncoderError(
                "backbone 'ResNet-50' needs the open_clip runtime and the "
                "openai RN50 checkpoint; install open_clip_torch and make the "
                "checkpoint reachable, or pass a custom encoder"
            ) from exc
        try:
            model, _, preprocess = open_clip.create_model_and_transforms(
                "RN50", pretrained="openai"
            )
            tokenizer = open_clip.get_tokenizer("RN50")
        except Exception as exc:
            raise EncoderError(
                "pretrained weights for backbone 'ResNet-50' (open_clip RN50, "
                f"pretrained=openai) could not be loaded: {exc}"
            ) from exc
        return _OpenClipEncoder(model, tokenizer, preprocess, BACKBONE_DIMS[backbone])

    checkpoint = _HF_CHECKPOINTS[backbone]
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as exc:
        raise EncoderError(
            f"backbone '{backbone}' needs the transformers runtime "
            f"(checkpoint {checkpoint}); install torch and transformers, or "
            "pass a custom encoder"
        ) from exc
    try:
        model = CLIPModel.from_pretrained(checkpoint)
        processor = CLIPProcessor.from_pretrained(checkpoint)
    except Exception as exc:
        raise EncoderError(
            f"pretrained weights for backbone '{backbone}' (checkpoint "
            f"{checkpoint}) could not be loaded: {exc}. Download the "
            "checkpoint into the local cache first, or pass a custom encoder"
        ) from exc
    return HfClipEncoder(model, processor, BACKBONE_DIMS[backbone])


class _OpenClipEncoder:
    """Inference-only wrapper over an open_clip model."""

    def __init__(self, model, tokenizer, preprocess, dim: int):
        self.model = model
        self.tokenizer = tokenizer
        self.preprocess = preprocess
        self.dim = dim
        self.model.eval()

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        import torch
        from PIL import Image

        rows = []
        with torch.no_grad():
            for start in range(0, len(paths), _IMAGE_BATCH):
                batch = torch.stack(
                    [
                        self.preprocess(Image.open(p).convert("RGB"))
                        for p in paths[start : start + _IMAGE_BATCH]
                    ]
                )
                rows.append(self.model.encode_image(batch).cpu().numpy())
        return np.concatenate(rows, axis=0).astype(np.float32)

    def encode_texts(self, prompts: Sequence[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self.tokenizer(list(prompts))
            return self.model.encode_text(tokens).cpu().numpy().astype(np.float32)
