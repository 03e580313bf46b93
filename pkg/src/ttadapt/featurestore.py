"""Binary embedding/label files, dataset manifests, and a synthetic generator.

File layouts (all little-endian):
  feature file: magic "TAF1", u32 row count, u32 dim, then count*dim float32
                row-major payload. Rows are stored pre-normalized; the loader
                validates norms and renormalizes.
  label file:   magic "TAL1", u32 count, then count int32 entries; -1 marks
                an unknown label.

The manifest is a strict JSON object with exactly the fields dataset_name,
dim, classes, image_features, labels, text_features. Relative paths resolve
against the manifest's own directory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics
from .errors import (
    ConsistencyError,
    CorruptionError,
    FormatError,
    NumericError,
    ParameterError,
    SchemaError,
    ShapeError,
)

FEATURE_MAGIC = b"TAF1"
LABEL_MAGIC = b"TAL1"
_FEATURE_HEADER = struct.Struct("<4sII")
_LABEL_HEADER = struct.Struct("<4sI")

MANIFEST_FIELDS = (
    "dataset_name",
    "dim",
    "classes",
    "image_features",
    "labels",
    "text_features",
)

# Philox stream tags for the generator, so each draw site is independent.
_STREAM_ROTATION_PLANE = 1
_STREAM_DRIFT_DIRECTION = 2
_STREAM_NOISE = 3
_STREAM_PROTOTYPES = 10
_STREAM_SAMPLE_NOISE = 11


def write_feature_file(path, matrix) -> None:
    """Write rows as a feature file; rows are normalized before writing."""
    m = numerics.as_matrix(matrix, "feature matrix")
    if m.shape[0]:
        m = numerics.renormalize_rows(m)
    blob = _FEATURE_HEADER.pack(FEATURE_MAGIC, m.shape[0], m.shape[1])
    blob += np.ascontiguousarray(m, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


def load_feature_file(path) -> np.ndarray:
    """Read a feature file into a float32 matrix with re-normalized rows."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FEATURE_HEADER.size:
        raise CorruptionError(f"{path}: truncated header ({len(data)} bytes)")
    magic, count, dim = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    expected = _FEATURE_HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise CorruptionError(
            f"{path}: file is {len(data)} bytes, header {count}x{dim} implies {expected}"
        )
    payload = np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size)
    m = np.ascontiguousarray(payload.reshape(count, dim), dtype=np.float32)
    if m.size and not np.all(np.isfinite(m)):
        raise NumericError(f"{path}: payload contains non-finite values")
    if count and dim:
        norms = np.sqrt(np.sum(np.square(m, dtype=np.float64), axis=1))
        bad = (norms < 0.99) | (norms > 1.01)
        if np.any(bad):
            row = int(np.argmax(bad))
            raise FormatError(
                f"{path}: row {row} norm {norms[row]:.4f} outside [0.99, 1.01]"
            )
        m = numerics.renormalize_rows(m)
    return m


def read_feature_header(path) -> tuple[int, int]:
    """Return (count, dim) from a feature file header, checking size consistency."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(_FEATURE_HEADER.size)
    if len(head) < _FEATURE_HEADER.size:
        raise CorruptionError(f"{path}: truncated header ({len(head)} bytes)")
    magic, count, dim = _FEATURE_HEADER.unpack(head)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    expected = _FEATURE_HEADER.size + 4 * count * dim
    if size != expected:
        raise CorruptionError(
            f"{path}: file is {size} bytes, header {count}x{dim} implies {expected}"
        )
    return count, dim


def write_label_file(path, labels) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    if labels.ndim != 1:
        raise ShapeError(f"label array must be 1-D, got ndim={labels.ndim}")
    if labels.size and int(labels.min()) < -1:
        raise FormatError("labels below -1 are not representable")
    blob = _LABEL_HEADER.pack(LABEL_MAGIC, labels.size)
    blob += labels.astype("<i4").tobytes()
    Path(path).write_bytes(blob)


def load_label_file(path, n_classes: int | None = None) -> np.ndarray:
    """Read a label file; -1 entries mean unknown. Bounds-checked when
    n_classes is given."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _LABEL_HEADER.size:
        raise CorruptionError(f"{path}: truncated header ({len(data)} bytes)")
    magic, count = _LABEL_HEADER.unpack_from(data)
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
    expected = _LABEL_HEADER.size + 4 * count
    if len(data) != expected:
        raise CorruptionError(
            f"{path}: file is {len(data)} bytes, header count {count} implies {expected}"
        )
    labels = np.frombuffer(data, dtype="<i4", offset=_LABEL_HEADER.size).astype(np.int32)
    if labels.size and int(labels.min()) < -1:
        raise FormatError(f"{path}: labels below -1 present")
    if n_classes is not None and labels.size and int(labels.max()) >= n_classes:
        raise ConsistencyError(
            f"{path}: label {int(labels.max())} out of range for {n_classes} classes"
        )
    return labels


@dataclass(frozen=True)
class Manifest:
    dataset_name: str
    dim: int
    classes: tuple[str, ...]
    image_features: Path
    labels: Path
    text_features: Path

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def load_manifest(path) -> Manifest:
    """Parse and eagerly validate a manifest, including the referenced files."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: manifest must be a JSON object")
    unknown = sorted(set(raw) - set(MANIFEST_FIELDS))
    if unknown:
        raise SchemaError(f"{path}: unknown fields {unknown}")
    for field_name in MANIFEST_FIELDS:
        if field_name not in raw:
            raise SchemaError(f"{path}: missing field '{field_name}'")
    if not isinstance(raw["dataset_name"], str) or not raw["dataset_name"]:
        raise SchemaError(f"{path}: dataset_name must be a nonempty string")
    if not isinstance(raw["dim"], int) or isinstance(raw["dim"], bool) or raw["dim"] < 1:
        raise SchemaError(f"{path}: dim must be a positive integer")
    classes = raw["classes"]
    if (
        not isinstance(classes, list)
        or not classes
        or not all(isinstance(c, str) and c for c in classes)
    ):
        raise SchemaError(f"{path}: classes must be a nonempty list of nonempty strings")
    base = path.parent
    resolved = {}
    for key in ("image_features", "labels", "text_features"):
        if not isinstance(raw[key], str) or not raw[key]:
            raise SchemaError(f"{path}: {key} must be a nonempty path string")
        p = Path(raw[key])
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise FileNotFoundError(f"{path}: {key} file not found at {p}")
        resolved[key] = p

    img_count, img_dim = read_feature_header(resolved["image_features"])
    txt_count, txt_dim = read_feature_header(resolved["text_features"])
    if img_dim != raw["dim"] or txt_dim != raw["dim"]:
        raise ConsistencyError(
            f"{path}: manifest dim {raw['dim']} vs image dim {img_dim}, text dim {txt_dim}"
        )
    if txt_count != len(classes):
        raise ConsistencyError(
            f"{path}: text feature rows {txt_count} != class count {len(classes)}"
        )
    labels = load_label_file(resolved["labels"], n_classes=len(classes))
    if labels.size != img_count:
        raise ConsistencyError(
            f"{path}: label count {labels.size} != image feature rows {img_count}"
        )
    return Manifest(
        dataset_name=raw["dataset_name"],
        dim=raw["dim"],
        classes=tuple(classes),
        image_features=resolved["image_features"],
        labels=resolved["labels"],
        text_features=resolved["text_features"],
    )


_SHIFT_KINDS = ("rotation", "mean_drift", "noise", "composite")


@dataclass(frozen=True)
class ShiftSpec:
    """Distribution shift applied to generated samples.

    kind selects which components act; "composite" applies rotation, drift,
    and noise in that order. Components with a zero parameter are skipped, so
    an all-zero spec leaves its input untouched.
    """

    kind: str = "composite"
    angle_rad: float = 0.0
    drift_scale: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _SHIFT_KINDS:
            raise ParameterError(f"shift kind '{self.kind}' not one of {_SHIFT_KINDS}")
        if self.noise_sigma < 0.0 or self.drift_scale < 0.0:
            raise ParameterError("shift drift_scale and noise_sigma must be nonnegative")

    @classmethod
    def none(cls) -> "ShiftSpec":
        return cls(kind="composite")

    @classmethod
    def rotation(cls, angle_rad: float, seed: int = 0) -> "ShiftSpec":
        return cls(kind="rotation", angle_rad=angle_rad, seed=seed)


def rotation_plane(dim: int, seed: int) -> tuple[int, int]:
    """Seeded choice of the coordinate pair (i < j) a rotation acts in."""
    if dim < 2:
        raise ParameterError(f"rotation needs dim >= 2, got {dim}")
    rng = numerics.make_rng(seed, stream=_STREAM_ROTATION_PLANE)
    i, j = sorted(int(x) for x in rng.permutation(dim)[:2])
    return i, j


def apply_shift(features, shift: ShiftSpec) -> np.ndarray:
    """Apply a shift to feature rows; rows are re-normalized afterwards.

    If every component is inactive the input matrix is returned unchanged.
    """
    m = numerics.as_matrix(features, "apply_shift input")
    out = m
    applied = False

    if shift.kind in ("rotation", "composite") and shift.angle_rad != 0.0:
        i, j = rotation_plane(m.shape[1], shift.seed)
        c = np.float32(math.cos(shift.angle_rad))
        s = np.float32(math.sin(shift.angle_rad))
        out = out.copy()
        xi = out[:, i].copy()
        xj = out[:, j].copy()
        out[:, i] = c * xi - s * xj
        out[:, j] = s * xi + c * xj
        applied = True

    if shift.kind in ("mean_drift", "composite") and shift.drift_scale != 0.0:
        rng = numerics.make_rng(shift.seed, stream=_STREAM_DRIFT_DIRECTION)
        direction = numerics.l2_normalize(rng.standard_normal(m.shape[1], dtype=np.float32))
        out = out + np.float32(shift.drift_scale) * direction
        applied = True

    if shift.kind in ("noise", "composite") and shift.noise_sigma != 0.0:
        rng = numerics.make_rng(shift.seed, stream=_STREAM_NOISE)
        g = rng.standard_normal(m.shape, dtype=np.float32)
        out = out + np.float32(shift.noise_sigma) * g
        applied = True

    if not applied:
        return m
    return numerics.renormalize_rows(out)


def synth_generate(
    n_classes: int,
    dim: int,
    n_samples: int,
    intra_class_sigma: float,
    shift: ShiftSpec,
    seed: int,
    out_dir,
) -> Path:
    """Generate a synthetic labeled dataset and write it under out_dir.

    Class prototypes are drawn uniformly on the unit sphere and double as the
    text features. Sample i belongs to class i mod n_classes (balanced round
    robin) and is prototype + Gaussian(0, intra_class_sigma^2 * I), shifted,
    then re-normalized. Returns the manifest path. Fully determined by
    (arguments, seed, shift.seed).
    """
    if n_classes < 2:
        raise ParameterError(f"n_classes must be >= 2, got {n_classes}")
    if dim < 2:
        raise ParameterError(f"dim must be >= 2, got {dim}")
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if intra_class_sigma < 0.0:
        raise ParameterError(f"intra_class_sigma must be nonnegative, got {intra_class_sigma}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    proto_rng = numerics.make_rng(seed, stream=_STREAM_PROTOTYPES)
    prototypes = numerics.renormalize_rows(
        proto_rng.standard_normal((n_classes, dim), dtype=np.float32)
    )
    labels = (np.arange(n_samples, dtype=np.int64) % n_classes).astype(np.int32)
    samples = prototypes[labels]
    if intra_class_sigma > 0.0:
        noise_rng = numerics.make_rng(seed, stream=_STREAM_SAMPLE_NOISE)
        noise = noise_rng.standard_normal((n_samples, dim), dtype=np.float32)
        samples = samples + np.float32(intra_class_sigma) * noise
    shifted = apply_shift(samples, shift)
    features = numerics.renormalize_rows(shifted)

    write_feature_file(out_dir / "features.taf", features)
    write_label_file(out_dir / "labels.tal", labels)
    write_feature_file(out_dir / "text_features.taf", prototypes)

    manifest = {
        "dataset_name": f"synthetic-{n_classes}c-{dim}d-{n_samples}n",
        "dim": dim,
        "classes": [f"class_{c:03d}" for c in range(n_classes)],
        "image_features": "features.taf",
        "labels": "labels.tal",
        "text_features": "text_features.taf",
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path
