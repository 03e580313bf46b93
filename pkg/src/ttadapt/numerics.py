"""Dense float32 math kernel with a deterministic summation order.

Everything here is pure, single-threaded numpy. Matrix products accumulate
along the inner dimension in ascending order, so results are bit-identical
across runs and match a naive scalar triple loop exactly; no BLAS is
involved. Randomness comes from numpy's Philox 4x64-10 counter-based bit
generator keyed directly with (seed, stream), which yields the same draw
sequence on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVectorError,
    DomainError,
    NumericError,
    ParameterError,
    RangeError,
    ShapeError,
)

# A Matrix throughout this package is a C-contiguous float32 2-D ndarray.
Matrix = np.ndarray


def as_matrix(values, context: str = "matrix") -> Matrix:
    """Coerce input to a contiguous float32 2-D array, rejecting non-finite data."""
    m = np.ascontiguousarray(values, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{context}: expected a 2-D array, got ndim={m.ndim}")
    if m.size and not np.all(np.isfinite(m)):
        raise NumericError(f"{context}: non-finite values present")
    return m


def as_vector(values, context: str = "vector") -> np.ndarray:
    """Coerce input to a contiguous float32 1-D array, rejecting non-finite data."""
    v = np.ascontiguousarray(values, dtype=np.float32)
    if v.ndim != 1:
        raise ShapeError(f"{context}: expected a 1-D array, got ndim={v.ndim}")
    if v.size and not np.all(np.isfinite(v)):
        raise NumericError(f"{context}: non-finite values present")
    return v


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Product a @ b with the inner sum accumulated in ascending-k order.

    Each output element sees the same float32 multiply/add sequence as a
    scalar triple loop, so the result is reproducible to the last bit.
    """
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, lhs {a.shape} vs rhs {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    if out.size and not np.all(np.isfinite(out)):
        raise NumericError("matmul: product overflowed to non-finite values")
    return out


def softmax_rows(m: Matrix, scale: float = 1.0) -> Matrix:
    """Row-wise softmax of scale*m, stabilized by per-row max subtraction."""
    m = as_matrix(m, "softmax_rows input")
    if m.size == 0:
        raise ShapeError("softmax_rows: input must be nonempty")
    if not (scale > 0.0):
        raise ParameterError(f"softmax_rows: scale must be positive, got {scale}")
    z = m * np.float32(scale)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean length (norm accumulated in float64)."""
    v = as_vector(v, "l2_normalize input")
    norm = float(np.sqrt(np.sum(np.square(v, dtype=np.float64))))
    if norm <= 1e-12:
        raise DegenerateVectorError(f"l2_normalize: norm {norm:.3e} is too small")
    return (v / np.float32(norm)).astype(np.float32)


def renormalize_rows(m: Matrix, snap_tol: float = 1e-5) -> Matrix:
    """Normalize each row to unit length.

    Rows whose norm is already within snap_tol of 1 pass through unchanged,
    which keeps renormalization idempotent at the byte level (a file written
    and reloaded any number of times stays bit-identical).
    """
    m = as_matrix(m, "renormalize_rows input")
    if m.shape[0] == 0:
        return m.copy()
    norms = np.sqrt(np.sum(np.square(m, dtype=np.float64), axis=1))
    if np.any(norms <= 1e-12):
        row = int(np.argmin(norms))
        raise DegenerateVectorError(
            f"renormalize_rows: row {row} has near-zero norm {norms[row]:.3e}"
        )
    out = m.copy()
    needs = np.abs(norms - 1.0) > snap_tol
    if np.any(needs):
        out[needs] = m[needs] / norms[needs, None].astype(np.float32)
    return out


def entropy(p) -> float:
    """Shannon entropy in nats of a probability vector; 0*ln(0) counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("entropy: expected a nonempty 1-D distribution")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0):
        raise DomainError("entropy: entries must be finite and nonnegative")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-5:
        raise DomainError(f"entropy: probabilities sum to {total:.6f}, expected 1")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(
            m=np.zeros_like(params, dtype=np.float32),
            v=np.zeros_like(params, dtype=np.float32),
            t=0,
        )


def adamw_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, AdamState]:
    """One AdamW update (decoupled weight decay, bias-corrected moments).

    Returns fresh (params, state); inputs are not mutated.
    """
    params = np.asarray(params, dtype=np.float32)
    grads = np.asarray(grads, dtype=np.float32)
    if params.shape != grads.shape:
        raise ShapeError(f"adamw_step: params {params.shape} vs grads {grads.shape}")
    if params.shape != state.m.shape or params.shape != state.v.shape:
        raise ShapeError("adamw_step: optimizer state shape does not match params")
    if lr < 0.0:
        raise ParameterError(f"adamw_step: lr must be nonnegative, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ParameterError("adamw_step: betas must lie in [0, 1)")
    t = state.t + 1
    m = (beta1 * state.m + (1.0 - beta1) * grads).astype(np.float32)
    v = (beta2 * state.v + (1.0 - beta2) * grads * grads).astype(np.float32)
    m_hat = m / np.float32(1.0 - beta1**t)
    v_hat = v / np.float32(1.0 - beta2**t)
    decayed = params * np.float32(1.0 - lr * weight_decay)
    new_params = (decayed - np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(eps))).astype(
        np.float32
    )
    return new_params, AdamState(m=m, v=v, t=t)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at step == total_steps."""
    if total_steps < 1:
        raise ParameterError(f"cosine_lr: total_steps must be >= 1, got {total_steps}")
    if lr0 < 0.0:
        raise ParameterError(f"cosine_lr: lr0 must be nonnegative, got {lr0}")
    if step < 0 or step > total_steps:
        raise RangeError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator: Philox 4x64-10 keyed by (seed, stream).

    The key is used verbatim (no entropy pool), so identical arguments give
    an identical draw sequence on every platform. Distinct stream tags give
    statistically independent sequences for the same user seed.
    """
    if seed < 0 or seed > 0xFFFFFFFFFFFFFFFF:
        raise ParameterError(f"make_rng: seed must fit in 64 bits, got {seed}")
    if stream < 0 or stream > 0xFFFFFFFFFFFFFFFF:
        raise ParameterError(f"make_rng: stream must fit in 64 bits, got {stream}")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
