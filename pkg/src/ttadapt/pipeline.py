"""Streaming orchestrator over a precomputed feature file.

Phase 1 covers the first floor(lambda_frac * N) samples: each one is
classified from the cosine logits plus the negative-cache term, then offered
to the cache and to the support collector. At the switch point the adapter
trains once on the collected support set and the adapted text rows are
frozen. Phase 2 classifies the remainder from the sum of cosine, adapter,
and cache terms. Admission gating, pseudo-labels, and entropies all come
from the zero-shot distribution; the fused logits decide only the reported
class. A frozen zero-shot prediction is tracked for every sample in the same
pass, so each report carries its own control baseline.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapter, featurestore, negcache, numerics, zeroshot
from .config import TtaConfig
from .errors import DomainError, ParameterError, RangeError, ShapeError

SWEEP_PARAMS = ("gamma", "lambda_frac", "lr", "epochs")

CSV_HEADER = "value,overall_top1,phase1_top1,phase2_top1,zero_shot_top1,wall_ms_total"


class SupportCollector:
    """Keeps the lowest-entropy phase-1 samples, at most K per pseudo-class.

    A full bucket admits a newcomer only by evicting its highest-entropy
    member, and only when the newcomer's entropy is strictly lower; ties keep
    the earlier sample. The retained sets therefore match an offline stable
    sort-by-entropy-then-take-K per class.
    """

    def __init__(self, n_classes: int, dim: int, cap_per_class: int):
        if n_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {n_classes}")
        if dim < 1:
            raise ParameterError(f"dim must be >= 1, got {dim}")
        if cap_per_class < 1:
            raise ParameterError(f"cap_per_class must be >= 1, got {cap_per_class}")
        self.n_classes = n_classes
        self.dim = dim
        self.cap_per_class = cap_per_class
        # Buckets hold (entropy, arrival_index, feature), kept sorted; the
        # arrival index breaks entropy ties in favor of earlier samples.
        self.buckets: list[list[tuple[float, int, np.ndarray]]] = [
            [] for _ in range(n_classes)
        ]
        self._arrivals = 0

    def offer(self, feature, pred: zeroshot.Prediction) -> bool:
        f = numerics.as_vector(feature, "support candidate")
        if f.size != self.dim:
            raise ShapeError(f"feature dim {f.size} != collector dim {self.dim}")
        if not 0 <= pred.pseudo_class < self.n_classes:
            raise RangeError(
                f"pseudo class {pred.pseudo_class} outside [0, {self.n_classes})"
            )
        self._arrivals += 1
        ent = float(pred.entropy_nats)
        bucket = self.buckets[pred.pseudo_class]
        if len(bucket) >= self.cap_per_class:
            if not ent < bucket[-1][0]:
                return False
            bucket.pop()
        bisect.insort(bucket, (ent, self._arrivals, f.copy()), key=lambda e: e[:2])
        return True

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.buckets)

    def support_set(self) -> adapter.SupportSet | None:
        """Snapshot as a SupportSet: classes ascending, entropies ascending
        within each class. None when nothing was collected."""
        if self.size == 0:
            return None
        feats, labels, ents = [], [], []
        for cls, bucket in enumerate(self.buckets):
            for ent, _, f in bucket:
                feats.append(f)
                labels.append(cls)
                ents.append(ent)
        return adapter.SupportSet(
            np.stack(feats).astype(np.float32),
            np.array(labels, np.int32),
            np.array(ents, np.float64),
        )


def fuse_logits(p_clip, p_adapter=None, p_neg=None) -> np.ndarray:
    """Elementwise sum of the present logit terms; absent terms add nothing."""
    out = numerics.as_vector(p_clip, "clip logits").copy()
    for name, term in (("adapter logits", p_adapter), ("cache logits", p_neg)):
        if term is None:
            continue
        t = numerics.as_vector(term, name)
        if t.size != out.size:
            raise ShapeError(f"{name} length {t.size} != clip logits length {out.size}")
        out += t
    return out


@dataclass(frozen=True)
class RunReport:
    """Everything one stream pass produced. Accuracy fields are None when no
    labeled sample contributed (unknown labels are encoded as -1)."""

    n_samples: int
    overall_top1: float | None
    phase1_top1: float | None
    phase2_top1: float | None
    zero_shot_top1: float | None
    per_class_top1: tuple[float | None, ...]
    support_set_size: int
    cache_stats: dict
    wall_ms_total: float
    wall_ms_training: float
    config: dict
    seed: int
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "overall_top1": self.overall_top1,
            "phase1_top1": self.phase1_top1,
            "phase2_top1": self.phase2_top1,
            "zero_shot_top1": self.zero_shot_top1,
            "per_class_top1": list(self.per_class_top1),
            "support_set_size": self.support_set_size,
            "cache_stats": dict(self.cache_stats),
            "wall_ms_total": self.wall_ms_total,
            "wall_ms_training": self.wall_ms_training,
            "config": dict(self.config),
            "seed": self.seed,
            "warnings": list(self.warnings),
        }


def redact_timing(report: RunReport) -> RunReport:
    """Copy with wall-clock fields zeroed, for byte-level comparisons."""
    return dataclasses.replace(report, wall_ms_total=0.0, wall_ms_training=0.0)


def _segment_top1(predictions, labels, lo: int, hi: int) -> float | None:
    seg_labels = labels[lo:hi]
    known = seg_labels >= 0
    if hi <= lo or not bool(known.any()):
        return None
    return float(np.mean(predictions[lo:hi][known] == seg_labels[known]))


def _per_sample_rows(text, support: adapter.SupportSet, feature, weights):
    """Adapted rows recomputed with the current feature joined to the support
    features (weights stay frozen; only the pooling is refreshed)."""
    keys = np.concatenate([support.features, feature[None, :]], axis=0)
    pooled = adapter.attention_pool(text, keys, weights)
    return numerics.renormalize_rows(adapter.gate_blend(text, pooled, weights))


def run_stream(manifest_path, config: TtaConfig, return_trace: bool = False):
    """Process a stream start to finish and report accuracies and timings.

    Samples are consumed strictly in file order, one at a time. Ground-truth
    labels feed only the metrics at the end; adaptation never sees them.
    Returns the RunReport, or (RunReport, trace) when return_trace is set,
    where the trace maps "predictions" and "zero_shot_predictions" to
    per-sample class indices.
    """
    t_start = time.perf_counter()
    manifest = featurestore.load_manifest(manifest_path)
    feats = featurestore.load_feature_file(manifest.image_features)
    labels = featurestore.load_label_file(manifest.labels, n_classes=manifest.n_classes)
    text = featurestore.load_feature_file(manifest.text_features)
    n = feats.shape[0]
    if n < 4:
        raise DomainError(f"stream needs at least 4 samples, got {n}")

    bank = zeroshot.TextBank(text, manifest.classes)
    n_classes = manifest.n_classes
    switch = math.floor(config.lambda_frac * n)
    cache = (
        negcache.NegativeCache.from_config(n_classes, manifest.dim, config)
        if config.use_neg_cache
        else None
    )
    collector = SupportCollector(n_classes, manifest.dim, config.support_cap_per_class)
    warnings: list[str] = []
    predictions = np.empty(n, np.int64)
    zs_predictions = np.empty(n, np.int64)

    for i in range(switch):
        f = feats[i]
        pred = zeroshot.predict(f, bank, config.logit_scale)
        p_neg = cache.negative_logits(f) if cache is not None else None
        predictions[i] = int(np.argmax(fuse_logits(pred.logits, None, p_neg)))
        zs_predictions[i] = pred.pseudo_class
        if cache is not None:
            cache.consider_insert(f, pred)
        collector.offer(f, pred)

    support = collector.support_set()
    wall_ms_training = 0.0
    weights = None
    adapted = None
    if support is None:
        warnings.append("support set empty at phase switch; adapter disabled")
    else:
        t_train = time.perf_counter()
        weights, adapted = adapter.fit(support, text, config)
        wall_ms_training = (time.perf_counter() - t_train) * 1000.0

    for i in range(switch, n):
        f = feats[i]
        pred = zeroshot.predict(f, bank, config.logit_scale)
        if adapted is None:
            p_ad = None
        elif config.per_sample_adaptation:
            rows = _per_sample_rows(text, support, f, weights)
            p_ad = adapter.adapter_logits(f, rows, config.gamma)
        else:
            p_ad = adapter.adapter_logits(f, adapted, config.gamma)
        p_neg = cache.negative_logits(f) if cache is not None else None
        predictions[i] = int(np.argmax(fuse_logits(pred.logits, p_ad, p_neg)))
        zs_predictions[i] = pred.pseudo_class
        if cache is not None:
            cache.consider_insert(f, pred)

    per_class = []
    for cls in range(n_classes):
        mask = labels == cls
        if not bool(mask.any()):
            per_class.append(None)
        else:
            per_class.append(float(np.mean(predictions[mask] == cls)))

    stats = (
        cache.stats()
        if cache is not None
        else negcache.CacheStats(0, (0,) * n_classes, None, None)
    )
    report = RunReport(
        n_samples=n,
        overall_top1=_segment_top1(predictions, labels, 0, n),
        phase1_top1=_segment_top1(predictions, labels, 0, switch),
        phase2_top1=_segment_top1(predictions, labels, switch, n),
        zero_shot_top1=_segment_top1(zs_predictions, labels, 0, n),
        per_class_top1=tuple(per_class),
        support_set_size=0 if support is None else support.size,
        cache_stats=stats.to_dict(),
        wall_ms_total=(time.perf_counter() - t_start) * 1000.0,
        wall_ms_training=wall_ms_training,
        config=config.to_dict(),
        seed=config.seed,
        warnings=tuple(warnings),
    )
    if return_trace:
        trace = {
            "predictions": predictions.copy(),
            "zero_shot_predictions": zs_predictions.copy(),
        }
        return report, trace
    return report


def sweep(manifest_path, base_config: TtaConfig, param_name: str, values):
    """One independent run per value of a single config parameter, same seed.

    Returns [(value, RunReport), ...] in the given value order.
    """
    if param_name not in SWEEP_PARAMS:
        raise ParameterError(
            f"unknown sweep parameter '{param_name}'; valid: {', '.join(SWEEP_PARAMS)}"
        )
    values = list(values)
    if not values:
        raise ParameterError("sweep needs at least one value")
    rows = []
    for value in values:
        v = float(value)
        if param_name == "epochs":
            if v != int(v):
                raise ParameterError(f"epochs value must be an integer, got {value}")
            cfg = dataclasses.replace(base_config, epochs=int(v))
        else:
            cfg = dataclasses.replace(base_config, **{param_name: v})
        rows.append((v, run_stream(manifest_path, cfg)))
    return rows


def _json_fmt(value, indent: int) -> str:
    pad = " " * indent
    inner = " " * (indent + 2)
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6f")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [inner + _json_fmt(v, indent + 2) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            inner + json.dumps(str(k)) + ": " + _json_fmt(v, indent + 2)
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_report(report: RunReport, path) -> None:
    """UTF-8 JSON with exactly the RunReport fields; every float is printed
    with six decimal digits so identical runs serialize identically."""
    Path(path).write_text(_json_fmt(report.to_dict(), 0) + "\n", encoding="utf-8")


def _csv_cell(value) -> str:
    return "" if value is None else format(float(value), ".6f")


def write_sweep_csv(rows, path, redact_timing_values: bool = False) -> None:
    """Fixed-header CSV, one line per swept value. Timing can be zeroed for
    byte-level determinism comparisons."""
    lines = [CSV_HEADER]
    for value, report in rows:
        wall = 0.0 if redact_timing_values else report.wall_ms_total
        lines.append(
            ",".join(
                [
                    format(float(value), ".6f"),
                    _csv_cell(report.overall_top1),
                    _csv_cell(report.phase1_top1),
                    _csv_cell(report.phase2_top1),
                    _csv_cell(report.zero_shot_top1),
                    format(wall, ".6f"),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
