"""Gated attention adapter that realigns class text embeddings to the test
distribution, with hand-derived analytic gradients.

The adapted classifier for class c is

    adapted_c = text_c + gate(text_c) * pooled_c

where pooled rows come from single-head attention (queries = projected text
rows, keys = projected image rows, values = raw image rows) and the gate is
an affine map of the text row. Training minimizes cross-entropy of
scale * cosine(adapted_c, f_i) against entropy-selected pseudo-labels, with
gradients written out by hand and verified against central finite
differences.

Forward and backward run in float64 internally: the finite-difference
harness needs more headroom than the float32 streaming kernel offers.
Public arrays in and out stay float32. At identity initialization
(projections = I, gate = 0) the adapter reproduces the text rows exactly,
bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics
from .config import TtaConfig
from .errors import (
    CorruptionError,
    DegenerateVectorError,
    EmptySupportError,
    FormatError,
    ParameterError,
    RangeError,
    ShapeError,
)

WEIGHTS_MAGIC = b"TAW1"
_WEIGHTS_HEADER = struct.Struct("<4sI")

# Philox stream tags (see numerics.make_rng).
_STREAM_GRAD_CHECK = 20
_STREAM_FIT_SHUFFLE = 30

# Row norms inside this tolerance of 1 are treated as exactly 1 when cosines
# are formed, mirroring renormalize_rows' snap behavior.
_UNIT_SNAP_TOL = 1e-5


@dataclass
class AdapterWeights:
    """Learned parameters: two square projections plus an affine gate."""

    query_proj: np.ndarray
    key_proj: np.ndarray
    gate_weight: np.ndarray
    gate_bias: float

    @classmethod
    def identity_init(cls, dim: int) -> "AdapterWeights":
        if dim < 1:
            raise ParameterError(f"dim must be >= 1, got {dim}")
        return cls(
            query_proj=np.eye(dim, dtype=np.float32),
            key_proj=np.eye(dim, dtype=np.float32),
            gate_weight=np.zeros(dim, dtype=np.float32),
            gate_bias=0.0,
        )

    @property
    def dim(self) -> int:
        return self.query_proj.shape[0]

    def validate(self) -> None:
        q = numerics.as_matrix(self.query_proj, "query_proj")
        k = numerics.as_matrix(self.key_proj, "key_proj")
        g = numerics.as_vector(self.gate_weight, "gate_weight")
        d = q.shape[0]
        if q.shape != (d, d) or k.shape != (d, d) or g.shape != (d,):
            raise ShapeError(
                f"adapter weight shapes disagree: {q.shape}, {k.shape}, {g.shape}"
            )
        if not math.isfinite(self.gate_bias):
            raise ShapeError("gate_bias must be finite")

    def copy(self) -> "AdapterWeights":
        return AdapterWeights(
            self.query_proj.copy(), self.key_proj.copy(),
            self.gate_weight.copy(), float(self.gate_bias),
        )


@dataclass
class AdapterGrads:
    d_query_proj: np.ndarray
    d_key_proj: np.ndarray
    d_gate_weight: np.ndarray
    d_gate_bias: float


@dataclass(frozen=True)
class SupportSet:
    """Pseudo-labeled features selected for adapter training.

    The collector emits entries grouped by class with entropies ascending
    inside each group; minibatch views taken during training are shuffled
    and do not keep that ordering.
    """

    features: np.ndarray
    pseudo_labels: np.ndarray
    entropies: np.ndarray

    def __post_init__(self):
        feats = numerics.as_matrix(self.features, "support features")
        labels = np.ascontiguousarray(self.pseudo_labels, dtype=np.int32)
        ents = np.ascontiguousarray(self.entropies, dtype=np.float64)
        if labels.ndim != 1 or ents.ndim != 1:
            raise ShapeError("support labels and entropies must be 1-D")
        if not (feats.shape[0] == labels.size == ents.size):
            raise ShapeError(
                f"support sizes disagree: {feats.shape[0]} features, "
                f"{labels.size} labels, {ents.size} entropies"
            )
        if labels.size and int(labels.min()) < 0:
            raise RangeError("support pseudo-labels must be nonnegative")
        if ents.size and not np.all(np.isfinite(ents)):
            raise ShapeError("support entropies must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "pseudo_labels", labels)
        object.__setattr__(self, "entropies", ents)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "SupportSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SupportSet(
            self.features[idx], self.pseudo_labels[idx], self.entropies[idx]
        )


def attention_pool(text_feats, image_feats, weights: AdapterWeights) -> np.ndarray:
    """One pooled row per class: softmax((text Wq^T)(F Wk^T)^T / sqrt(D)) @ F."""
    text = numerics.as_matrix(text_feats, "text features")
    imgs = numerics.as_matrix(image_feats, "image features")
    if imgs.shape[0] == 0:
        raise EmptySupportError("attention_pool: no image features to pool")
    if text.shape[1] != imgs.shape[1]:
        raise ShapeError(
            f"text dim {text.shape[1]} != image dim {imgs.shape[1]}"
        )
    weights.validate()
    if weights.dim != text.shape[1]:
        raise ShapeError(f"weights dim {weights.dim} != feature dim {text.shape[1]}")
    attn, pooled = _attention_forward64(
        text.astype(np.float64),
        imgs.astype(np.float64),
        weights.query_proj.astype(np.float64),
        weights.key_proj.astype(np.float64),
    )
    return pooled.astype(np.float32)


def _attention_forward64(text64, imgs64, wq64, wk64):
    q = text64 @ wq64.T
    k = imgs64 @ wk64.T
    scores = (q @ k.T) / math.sqrt(text64.shape[1])
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=1, keepdims=True)
    return attn, attn @ imgs64


def gate_blend(text_feats, pooled, weights: AdapterWeights) -> np.ndarray:
    """text + gate(text) * pooled, one scalar gate per class row.

    With a zero gate the output equals the text rows bit for bit.
    """
    text = numerics.as_matrix(text_feats, "text features")
    p = numerics.as_matrix(pooled, "pooled features")
    if text.shape != p.shape:
        raise ShapeError(f"text {text.shape} vs pooled {p.shape}")
    weights.validate()
    if weights.dim != text.shape[1]:
        raise ShapeError(f"weights dim {weights.dim} != feature dim {text.shape[1]}")
    gate = numerics.matmul(text, weights.gate_weight[:, None])[:, 0] + np.float32(
        weights.gate_bias
    )
    return text + gate[:, None] * p


def adapter_logits(test_feature, adapted_text, gamma: float) -> np.ndarray:
    """gamma-weighted cosine of each adapted text row with a unit test feature.

    Rows whose norm is already within 1e-5 of 1 skip the division, so
    pre-normalized rows feed through the same arithmetic as raw inner
    products.
    """
    if gamma < 0.0:
        raise ParameterError(f"gamma must be nonnegative, got {gamma}")
    adapted = numerics.as_matrix(adapted_text, "adapted text")
    f = numerics.as_vector(test_feature, "test feature")
    if f.size != adapted.shape[1]:
        raise ShapeError(f"feature dim {f.size} != adapted dim {adapted.shape[1]}")
    fnorm = float(np.sqrt(np.sum(np.square(f, dtype=np.float64))))
    if abs(fnorm - 1.0) > 1e-4:
        raise ParameterError(f"test feature norm {fnorm:.6f}, expected 1")
    norms = np.sqrt(np.sum(np.square(adapted, dtype=np.float64), axis=1))
    if np.any(norms <= 1e-12):
        row = int(np.argmin(norms))
        raise DegenerateVectorError(f"adapted row {row} has near-zero norm")
    dots = numerics.matmul(adapted, f[:, None])[:, 0]
    inv = np.where(np.abs(norms - 1.0) <= _UNIT_SNAP_TOL, 1.0, 1.0 / norms).astype(
        np.float32
    )
    return np.float32(gamma) * dots * inv


@dataclass
class TrainCache:
    """Float64 activations kept from the forward pass for the backward pass."""

    text: np.ndarray
    feats: np.ndarray
    labels: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    gate_weight: np.ndarray
    gate_bias: float
    logit_scale: float
    q: np.ndarray
    k: np.ndarray
    attn: np.ndarray
    pooled: np.ndarray
    gate: np.ndarray
    adapted: np.ndarray
    row_norms: np.ndarray
    dots: np.ndarray
    probs: np.ndarray


def train_forward_loss(
    support: SupportSet,
    text_feats,
    weights: AdapterWeights,
    logit_scale: float = 100.0,
) -> tuple[float, TrainCache]:
    """Mean cross-entropy of the adapter's scaled cosine logits on a batch.

    The batch features serve both as the attention keys/values and as the
    classified samples.
    """
    if support.size == 0:
        raise EmptySupportError("train_forward_loss: empty support batch")
    if not logit_scale > 0.0:
        raise ParameterError(f"logit_scale must be positive, got {logit_scale}")
    text = numerics.as_matrix(text_feats, "text features")
    weights.validate()
    if text.shape[1] != support.dim or weights.dim != support.dim:
        raise ShapeError(
            f"dims disagree: text {text.shape[1]}, support {support.dim}, "
            f"weights {weights.dim}"
        )
    n_classes = text.shape[0]
    if int(support.pseudo_labels.max()) >= n_classes:
        raise RangeError(
            f"pseudo-label {int(support.pseudo_labels.max())} out of range "
            f"for {n_classes} classes"
        )

    text64 = text.astype(np.float64)
    feats64 = support.features.astype(np.float64)
    labels = support.pseudo_labels.astype(np.int64)
    wq = weights.query_proj.astype(np.float64)
    wk = weights.key_proj.astype(np.float64)
    gw = weights.gate_weight.astype(np.float64)
    gb = float(weights.gate_bias)

    attn, pooled = _attention_forward64(text64, feats64, wq, wk)
    gate = text64 @ gw + gb
    adapted = text64 + gate[:, None] * pooled
    # Norm floor keeps the loss finite if a row collapses mid-training.
    row_norms = np.maximum(np.sqrt(np.sum(np.square(adapted), axis=1)), 1e-12)
    dots = feats64 @ adapted.T
    z = logit_scale * (dots / row_norms[None, :])
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    loss = float(np.mean(lse - z[np.arange(z.shape[0]), labels]))
    probs = np.exp(z - zmax)
    probs /= probs.sum(axis=1, keepdims=True)

    cache = TrainCache(
        text=text64, feats=feats64, labels=labels,
        wq=wq, wk=wk, gate_weight=gw, gate_bias=gb, logit_scale=float(logit_scale),
        q=text64 @ wq.T, k=feats64 @ wk.T, attn=attn, pooled=pooled,
        gate=gate, adapted=adapted, row_norms=row_norms, dots=dots, probs=probs,
    )
    return loss, cache


def train_backward(cache: TrainCache) -> AdapterGrads:
    """Analytic gradients of the batch loss for every adapter parameter.

    Derivation sketch (B samples, N classes, D dims):
      dz      = (probs - onehot) / B                       (cross-entropy)
      dcos    = scale * dz
      d dots  = dcos / row_norm[c]
      d norm  = -sum_i dcos[i,c] * dots[i,c] / row_norm[c]^2
      d adapted = ddots^T @ feats + (dnorm / row_norm) * adapted
      d gate  = <d adapted_c, pooled_c>;  d pooled = gate_c * d adapted_c
      d gate_weight = text^T @ dgate;  d gate_bias = sum dgate
      d attn  = dpooled @ feats^T; softmax backprop rows -> dscores
      dq = dscores @ k / sqrt(D);  dk = dscores^T @ q / sqrt(D)
      d query_proj = dq^T @ text;  d key_proj = dk^T @ feats
    Image features are data, so no gradient flows into them.
    """
    b, n = cache.probs.shape
    d = cache.text.shape[1]

    dz = cache.probs.copy()
    dz[np.arange(b), cache.labels] -= 1.0
    dz /= b
    dcos = cache.logit_scale * dz

    ddots = dcos / cache.row_norms[None, :]
    dnorm = -np.sum(dcos * cache.dots, axis=0) / (cache.row_norms**2)
    dadapted = ddots.T @ cache.feats + (dnorm / cache.row_norms)[:, None] * cache.adapted

    dgate = np.sum(dadapted * cache.pooled, axis=1)
    dpooled = cache.gate[:, None] * dadapted
    d_gate_weight = cache.text.T @ dgate
    d_gate_bias = float(dgate.sum())

    dattn = dpooled @ cache.feats.T
    dscores = cache.attn * (dattn - np.sum(dattn * cache.attn, axis=1, keepdims=True))
    scale = 1.0 / math.sqrt(d)
    dq = dscores @ cache.k * scale
    dk = dscores.T @ cache.q * scale
    d_query = dq.T @ cache.text
    d_key = dk.T @ cache.feats

    return AdapterGrads(
        d_query_proj=d_query.astype(np.float32),
        d_key_proj=d_key.astype(np.float32),
        d_gate_weight=d_gate_weight.astype(np.float32),
        d_gate_bias=d_gate_bias,
    )


def grad_check(
    n_classes: int, dim: int, support_size: int, seed: int, eps: float = 1e-3
) -> float:
    """Worst relative error of analytic vs central-difference gradients on a
    random instance. Pure function of its arguments."""
    if n_classes < 2 or dim < 2 or support_size < 1:
        raise ParameterError(
            f"grad_check needs n_classes >= 2, dim >= 2, support_size >= 1; "
            f"got ({n_classes}, {dim}, {support_size})"
        )
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")

    rng = numerics.make_rng(seed, stream=_STREAM_GRAD_CHECK)
    text = numerics.renormalize_rows(rng.standard_normal((n_classes, dim), dtype=np.float32))
    feats = numerics.renormalize_rows(
        rng.standard_normal((support_size, dim), dtype=np.float32)
    )
    labels = rng.integers(0, n_classes, size=support_size).astype(np.int32)
    entropies = rng.uniform(0.0, 1.0, size=support_size)
    support = SupportSet(feats, labels, entropies)
    # Mild random regime around the identity init.
    weights = AdapterWeights(
        query_proj=(np.eye(dim) + 0.1 * rng.standard_normal((dim, dim))).astype(np.float32),
        key_proj=(np.eye(dim) + 0.1 * rng.standard_normal((dim, dim))).astype(np.float32),
        gate_weight=(0.1 * rng.standard_normal(dim)).astype(np.float32),
        gate_bias=float(0.1 * rng.standard_normal()),
    )

    _, cache = train_forward_loss(support, text, weights, logit_scale=100.0)
    grads = train_backward(cache)

    def loss_with(w: AdapterWeights) -> float:
        return train_forward_loss(support, text, w, logit_scale=100.0)[0]

    worst = 0.0

    def check(analytic: float, plus: AdapterWeights, minus: AdapterWeights, a, b) -> float:
        # Use the realized float32 parameter gap as the denominator step.
        span = float(a) - float(b)
        fd = (loss_with(plus) - loss_with(minus)) / span
        return abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)

    for name, grad in (
        ("query_proj", grads.d_query_proj),
        ("key_proj", grads.d_key_proj),
        ("gate_weight", grads.d_gate_weight),
    ):
        base = getattr(weights, name)
        for idx in np.ndindex(base.shape):
            plus, minus = weights.copy(), weights.copy()
            getattr(plus, name)[idx] = np.float32(base[idx] + eps)
            getattr(minus, name)[idx] = np.float32(base[idx] - eps)
            err = check(
                float(grad[idx]), plus, minus,
                getattr(plus, name)[idx], getattr(minus, name)[idx],
            )
            worst = max(worst, err)

    plus, minus = weights.copy(), weights.copy()
    plus.gate_bias = float(np.float32(weights.gate_bias + eps))
    minus.gate_bias = float(np.float32(weights.gate_bias - eps))
    worst = max(
        worst,
        check(grads.d_gate_bias, plus, minus, plus.gate_bias, minus.gate_bias),
    )
    return worst


def fit(
    support: SupportSet | None,
    text_feats,
    config: TtaConfig,
) -> tuple[AdapterWeights, np.ndarray]:
    """Train the adapter on the support set, then freeze the adapted rows.

    Minibatches are seeded shuffles (size config.batch, final partial batch
    kept); each step applies one AdamW update per parameter tensor under a
    cosine learning-rate schedule. Afterwards the adapted text matrix is
    computed once from the full support set and returned row-normalized.
    With no support the identity weights and the normalized text rows come
    back unchanged.
    """
    text = numerics.as_matrix(text_feats, "text features")
    weights = AdapterWeights.identity_init(text.shape[1])
    if support is None or support.size == 0:
        return weights, numerics.renormalize_rows(text)
    if support.dim != text.shape[1]:
        raise ShapeError(f"support dim {support.dim} != text dim {text.shape[1]}")

    n = support.size
    steps_per_epoch = math.ceil(n / config.batch)
    total_steps = config.epochs * steps_per_epoch
    if total_steps > 0:
        rng = numerics.make_rng(config.seed, stream=_STREAM_FIT_SHUFFLE)
        states = {
            "query_proj": numerics.AdamState.zeros_like(weights.query_proj),
            "key_proj": numerics.AdamState.zeros_like(weights.key_proj),
            "gate_weight": numerics.AdamState.zeros_like(weights.gate_weight),
            "gate_bias": numerics.AdamState.zeros_like(np.zeros(1, np.float32)),
        }
        step = 0
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, config.batch):
                batch = support.subset(order[start : start + config.batch])
                _, cache = train_forward_loss(batch, text, weights, config.logit_scale)
                grads = train_backward(cache)
                lr_t = numerics.cosine_lr(step, total_steps, config.lr)
                weights.query_proj, states["query_proj"] = numerics.adamw_step(
                    weights.query_proj, grads.d_query_proj, states["query_proj"], lr_t
                )
                weights.key_proj, states["key_proj"] = numerics.adamw_step(
                    weights.key_proj, grads.d_key_proj, states["key_proj"], lr_t
                )
                weights.gate_weight, states["gate_weight"] = numerics.adamw_step(
                    weights.gate_weight, grads.d_gate_weight, states["gate_weight"], lr_t
                )
                bias_arr, states["gate_bias"] = numerics.adamw_step(
                    np.array([weights.gate_bias], dtype=np.float32),
                    np.array([grads.d_gate_bias], dtype=np.float32),
                    states["gate_bias"],
                    lr_t,
                )
                weights.gate_bias = float(bias_arr[0])
                step += 1

    pooled = attention_pool(text, support.features, weights)
    adapted = gate_blend(text, pooled, weights)
    return weights, numerics.renormalize_rows(adapted)


def save_weights(path, weights: AdapterWeights) -> None:
    """Checkpoint layout: magic "TAW1", u32 dim, then query_proj, key_proj,
    gate_weight, gate_bias as little-endian float32."""
    weights.validate()
    d = weights.dim
    blob = _WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, d)
    blob += np.ascontiguousarray(weights.query_proj, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(weights.key_proj, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(weights.gate_weight, dtype="<f4").tobytes()
    blob += np.float32(weights.gate_bias).astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def load_weights(path) -> AdapterWeights:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _WEIGHTS_HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    magic, d = _WEIGHTS_HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    expected = _WEIGHTS_HEADER.size + 4 * (d * d + d * d + d + 1)
    if len(data) != expected:
        raise CorruptionError(
            f"{path}: file is {len(data)} bytes, dim {d} implies {expected}"
        )
    body = np.frombuffer(data, dtype="<f4", offset=_WEIGHTS_HEADER.size)
    qp = body[: d * d].reshape(d, d).astype(np.float32)
    kp = body[d * d : 2 * d * d].reshape(d, d).astype(np.float32)
    gw = body[2 * d * d : 2 * d * d + d].astype(np.float32)
    gb = float(body[-1])
    out = AdapterWeights(qp, kp, gw, gb)
    out.validate()
    return out
