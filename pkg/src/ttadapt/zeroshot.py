"""Frozen cosine-similarity classifier over unit-norm class text embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import NumericError, ParameterError, RangeError, ShapeError


@dataclass(frozen=True)
class TextBank:
    """One unit-norm embedding row per class, plus the class names."""

    class_embeddings: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        m = numerics.as_matrix(self.class_embeddings, "class embeddings")
        if m.shape[0] < 2:
            raise ParameterError(f"need at least 2 classes, got {m.shape[0]}")
        if len(self.class_names) != m.shape[0]:
            raise ShapeError(
                f"{len(self.class_names)} names for {m.shape[0]} embedding rows"
            )
        norms = np.sqrt(np.sum(np.square(m, dtype=np.float64), axis=1))
        if np.any(np.abs(norms - 1.0) > 1e-4):
            row = int(np.argmax(np.abs(norms - 1.0)))
            raise NumericError(
                f"class embedding row {row} has norm {norms[row]:.6f}, expected 1"
            )
        object.__setattr__(self, "class_embeddings", m)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_classes(self) -> int:
        return self.class_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.class_embeddings.shape[1]

    @classmethod
    def from_rows(cls, rows, class_names) -> "TextBank":
        """Build a bank from arbitrary finite rows, normalizing them first."""
        return cls(numerics.renormalize_rows(numerics.as_matrix(rows)), tuple(class_names))


@dataclass(frozen=True)
class Prediction:
    """Raw cosine logits plus the derived quantities the stream loop needs."""

    logits: np.ndarray
    probs: np.ndarray
    pseudo_class: int
    entropy_nats: float


def _checked_feature(test_feature, dim: int) -> np.ndarray:
    f = numerics.as_vector(test_feature, "test feature")
    if f.size != dim:
        raise ShapeError(f"test feature dim {f.size} != class embedding dim {dim}")
    norm = float(np.sqrt(np.sum(np.square(f, dtype=np.float64))))
    if abs(norm - 1.0) > 1e-4:
        raise NumericError(f"test feature norm {norm:.6f}, expected 1")
    return f


def cosine_logits(test_feature, bank: TextBank) -> np.ndarray:
    """Inner product of the unit test feature with every class embedding row."""
    f = _checked_feature(test_feature, bank.dim)
    return numerics.matmul(bank.class_embeddings, f[:, None])[:, 0]


def predict(test_feature, bank: TextBank, logit_scale: float = 100.0) -> Prediction:
    """Classify one feature: logits, temperature-scaled probs, argmax, entropy.

    Ties in the logits resolve to the lowest class index.
    """
    logits = cosine_logits(test_feature, bank)
    probs = numerics.softmax_rows(logits[None, :], scale=logit_scale)[0]
    return Prediction(
        logits=logits,
        probs=probs,
        pseudo_class=int(np.argmax(logits)),
        entropy_nats=numerics.entropy(probs),
    )


def pseudo_one_hot(pred: Prediction, n_classes: int) -> np.ndarray:
    """One-hot float32 vector for a prediction's pseudo class."""
    if not 0 <= pred.pseudo_class < n_classes:
        raise RangeError(
            f"pseudo class {pred.pseudo_class} outside [0, {n_classes})"
        )
    out = np.zeros(n_classes, dtype=np.float32)
    out[pred.pseudo_class] = 1.0
    return out
