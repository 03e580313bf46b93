"""Bounded per-pseudo-class store of uncertain test features that votes
against classes judged absent.

A sample is admitted when its prediction entropy sits in a mid-range window
(confident samples teach nothing new, uniform ones teach nothing at all) and
its probability vector marks at least one class, but not every class, as
implausible. Each stored entry carries the raw feature, that binary
class-absence mask, and the entropy. Lookup scans every entry and subtracts
alpha * exp(-beta * (1 - <f, q>)) from each masked class, so stored features
near the query push hardest. The buckets only organize entries by pseudo
class; a naive scan over all stored entries is the definition of the output,
and the tests hold the implementation to it.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from operator import attrgetter

import numpy as np

from . import numerics
from .config import TtaConfig
from .errors import DomainError, NumericError, ParameterError, RangeError, ShapeError
from .zeroshot import Prediction


def build_neg_mask(probs, threshold: float) -> np.ndarray:
    """Boolean class-absence mask: True where the probability is below the
    threshold. May come back all-False or all-True; callers must check
    mask_informative before storing it."""
    p = numerics.as_vector(probs, "probability vector")
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"mask threshold must lie in (0, 1), got {threshold}")
    if np.any(p < 0.0) or abs(float(np.sum(p, dtype=np.float64)) - 1.0) > 1e-5:
        raise DomainError("probabilities must be nonnegative and sum to 1")
    return p < np.float32(threshold)


def mask_informative(mask: np.ndarray) -> bool:
    """A mask helps only if it excludes some class and keeps some other."""
    ones = int(np.count_nonzero(mask))
    return 1 <= ones <= mask.size - 1


@dataclass(frozen=True)
class NegEntry:
    """One cached sample: raw feature, class-absence mask, entropy."""

    feature: np.ndarray
    neg_mask: np.ndarray
    entropy_nats: float

    def __post_init__(self):
        f = numerics.as_vector(self.feature, "cached feature")
        mask = np.ascontiguousarray(self.neg_mask, dtype=bool)
        if mask.ndim != 1:
            raise ShapeError("neg_mask must be 1-D")
        if not mask_informative(mask):
            raise DomainError(
                "neg_mask must exclude at least one class and keep at least one"
            )
        if not (math.isfinite(self.entropy_nats) and self.entropy_nats >= 0.0):
            raise DomainError(f"entropy must be finite and >= 0, got {self.entropy_nats}")
        object.__setattr__(self, "feature", f)
        object.__setattr__(self, "neg_mask", mask)


@dataclass(frozen=True)
class CacheStats:
    total: int
    per_bucket: tuple[int, ...]
    entropy_min: float | None
    entropy_max: float | None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "per_bucket": list(self.per_bucket),
            "entropy_min": self.entropy_min,
            "entropy_max": self.entropy_max,
        }


class NegativeCache:
    """Per-pseudo-class queues of NegEntry, sorted by entropy ascending.

    Capacity is per bucket. A full bucket accepts a newcomer only by evicting
    its highest-entropy member, and only when the newcomer's entropy is
    strictly lower, so a bucket's worst entropy never increases.
    """

    def __init__(
        self,
        n_classes: int,
        dim: int,
        capacity: int = 3,
        entropy_lo: float = 0.2,
        entropy_hi: float = 0.5,
        mask_threshold: float = 0.03,
        alpha: float = 0.35,
        beta: float = 5.5,
    ):
        if n_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {n_classes}")
        if dim < 1:
            raise ParameterError(f"dim must be >= 1, got {dim}")
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1, got {capacity}")
        if not 0.0 <= entropy_lo <= entropy_hi <= 1.0:
            raise ParameterError(
                f"entropy window must satisfy 0 <= lo <= hi <= 1, "
                f"got ({entropy_lo}, {entropy_hi})"
            )
        if not 0.0 < mask_threshold < 1.0:
            raise ParameterError(
                f"mask threshold must lie in (0, 1), got {mask_threshold}"
            )
        if alpha < 0.0 or beta < 0.0:
            raise ParameterError(
                f"affinity params must be nonnegative, got alpha={alpha} beta={beta}"
            )
        self.n_classes = n_classes
        self.dim = dim
        self.capacity = capacity
        self.mask_threshold = mask_threshold
        self.alpha = alpha
        self.beta = beta
        # Window bounds in nats, fixed by N.
        self.entropy_lo_nats = entropy_lo * math.log(n_classes)
        self.entropy_hi_nats = entropy_hi * math.log(n_classes)
        self.buckets: list[list[NegEntry]] = [[] for _ in range(n_classes)]

    @classmethod
    def from_config(cls, n_classes: int, dim: int, config: TtaConfig) -> "NegativeCache":
        return cls(
            n_classes,
            dim,
            capacity=config.cache_capacity,
            entropy_lo=config.cache_entropy_lo,
            entropy_hi=config.cache_entropy_hi,
            mask_threshold=config.cache_mask_threshold,
            alpha=config.cache_affinity_alpha,
            beta=config.cache_affinity_beta,
        )

    def _checked_feature(self, feature) -> np.ndarray:
        f = numerics.as_vector(feature, "test feature")
        if f.size != self.dim:
            raise ShapeError(f"feature dim {f.size} != cache dim {self.dim}")
        norm = float(np.sqrt(np.sum(np.square(f, dtype=np.float64))))
        if abs(norm - 1.0) > 1e-4:
            raise NumericError(f"test feature norm {norm:.6f}, expected 1")
        return f

    def consider_insert(self, feature, pred: Prediction) -> bool:
        """Offer one sample; returns whether it was stored."""
        f = self._checked_feature(feature)
        if pred.probs.shape != (self.n_classes,):
            raise ShapeError(
                f"prediction covers {pred.probs.shape[0]} classes, cache has "
                f"{self.n_classes}"
            )
        if not 0 <= pred.pseudo_class < self.n_classes:
            raise RangeError(
                f"pseudo class {pred.pseudo_class} outside [0, {self.n_classes})"
            )
        ent = float(pred.entropy_nats)
        if not self.entropy_lo_nats <= ent <= self.entropy_hi_nats:
            return False
        mask = build_neg_mask(pred.probs, self.mask_threshold)
        if not mask_informative(mask):
            return False
        bucket = self.buckets[pred.pseudo_class]
        if len(bucket) >= self.capacity:
            if not ent < bucket[-1].entropy_nats:
                return False
            bucket.pop()
        entry = NegEntry(f.copy(), mask, ent)
        bisect.insort(bucket, entry, key=attrgetter("entropy_nats"))
        return True

    def negative_logits(self, feature) -> np.ndarray:
        """Subtractive logit vector: 0 for an empty cache, else each stored
        entry charges alpha * exp(-beta * (1 - <f, q>)) to its masked classes."""
        f = self._checked_feature(feature).astype(np.float64)
        acc = np.zeros(self.n_classes, dtype=np.float64)
        for bucket in self.buckets:
            for entry in bucket:
                affinity = self.alpha * math.exp(
                    -self.beta * (1.0 - float(f @ entry.feature.astype(np.float64)))
                )
                acc[entry.neg_mask] += affinity
        return (-acc).astype(np.float32)

    def stats(self) -> CacheStats:
        sizes = tuple(len(b) for b in self.buckets)
        total = sum(sizes)
        if total == 0:
            return CacheStats(0, sizes, None, None)
        ents = [e.entropy_nats for b in self.buckets for e in b]
        return CacheStats(total, sizes, min(ents), max(ents))
