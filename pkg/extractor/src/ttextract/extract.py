"""Feature extraction into the streaming engine's file formats.

`extract` walks a class-folder dataset, encodes every image plus one
prompt per class, and writes the feature/label/manifest files that
`ttadapt` loads. `verify_alignment` is a standalone sanity probe over a
written manifest: if cosine nearest-prompt accuracy is near chance, the
image and text towers almost certainly do not belong together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ttadapt import featurestore

from .dataset import enumerate_imagefolder
from .encoders import BACKBONE_DIMS, FeatureEncoder, resolve_encoder
from .errors import EncoderError

DEFAULT_TEMPLATE = "a photo of a {}."

_MIN_EMBED_NORM = 1e-6


@dataclass(frozen=True)
class ExtractJob:
    """Everything one extraction run needs to be reproducible."""

    dataset_dir: Path
    backbone: str
    out_dir: Path
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        object.__setattr__(self, "dataset_dir", Path(self.dataset_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.backbone not in BACKBONE_DIMS:
            raise EncoderError(
                f"unknown backbone '{self.backbone}'; supported: "
                + ", ".join(sorted(BACKBONE_DIMS))
            )
        if "{}" not in self.template:
            raise EncoderError(
                f"prompt template must contain a {{}} placeholder, got "
                f"'{self.template}'"
            )

    def prompts(self, classes) -> list[str]:
        return [self.template.format(name.replace("_", " ")) for name in classes]


def _checked_embeddings(rows, expected_count: int, dim: int, what: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float32)
    if rows.shape != (expected_count, dim):
        raise EncoderError(
            f"encoder returned {what} of shape {rows.shape}, "
            f"expected ({expected_count}, {dim})"
        )
    if not np.isfinite(rows).all():
        raise EncoderError(f"encoder returned non-finite {what}")
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if norms.min(initial=np.inf) <= _MIN_EMBED_NORM:
        raise EncoderError(f"encoder returned a near-zero {what} row")
    return rows


def extract(job: ExtractJob, encoder: FeatureEncoder | None = None) -> Path:
    """Run one extraction job; returns the path of the written manifest.

    The dataset is enumerated before any encoder is constructed so layout
    problems surface without paying for model load. An injected encoder
    must match the registered width of the job's backbone.
    """
    folder = enumerate_imagefolder(job.dataset_dir)
    if encoder is None:
        encoder = resolve_encoder(job.backbone)
    dim = BACKBONE_DIMS[job.backbone]
    if encoder.dim != dim:
        raise EncoderError(
            f"encoder dim {encoder.dim} does not match backbone "
            f"'{job.backbone}' dim {dim}"
        )

    prompts = job.prompts(folder.classes)
    image_rows = _checked_embeddings(
        encoder.encode_images(folder.paths), folder.n_images, dim, "image features"
    )
    text_rows = _checked_embeddings(
        encoder.encode_texts(prompts), len(prompts), dim, "text features"
    )

    out_dir = job.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    featurestore.write_feature_file(out_dir / "image_features.taf", image_rows)
    featurestore.write_label_file(
        out_dir / "labels.tal", np.asarray(folder.labels, dtype=np.int32)
    )
    featurestore.write_feature_file(out_dir / "text_features.taf", text_rows)

    manifest = {
        "dataset_name": folder.root.resolve().name,
        "dim": dim,
        "classes": list(folder.classes),
        "image_features": "image_features.taf",
        "labels": "labels.tal",
        "text_features": "text_features.taf",
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    featurestore.load_manifest(manifest_path)
    return manifest_path


@dataclass(frozen=True)
class AlignmentReport:
    dataset_name: str
    n_images: int
    n_classes: int
    top1: float | None
    chance: float
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "n_images": self.n_images,
            "n_classes": self.n_classes,
            "top1": self.top1,
            "chance": self.chance,
            "flagged": self.flagged,
        }


def verify_alignment(manifest_path) -> AlignmentReport:
    """Score nearest-prompt accuracy for a written manifest.

    Flags the manifest when labeled accuracy is within 5 points of
    chance; unlabeled datasets get top1 None and are never flagged.
    """
    man = featurestore.load_manifest(manifest_path)
    feats = featurestore.load_feature_file(man.image_features)
    text = featurestore.load_feature_file(man.text_features)
    labels = featurestore.load_label_file(man.labels, n_classes=man.n_classes)

    chance = 1.0 / man.n_classes
    known = labels >= 0
    if known.any():
        sims = feats[known].astype(np.float64) @ text.astype(np.float64).T
        top1 = float(np.mean(np.argmax(sims, axis=1) == labels[known]))
        flagged = top1 < chance + 0.05
    else:
        top1 = None
        flagged = False
    return AlignmentReport(
        dataset_name=man.dataset_name,
        n_images=feats.shape[0],
        n_classes=man.n_classes,
        top1=top1,
        chance=chance,
        flagged=flagged,
    )
