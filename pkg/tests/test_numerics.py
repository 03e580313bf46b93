"""Kernel tests. Oracles here are independent re-implementations: a scalar
triple-loop matmul and a straight transcription of the AdamW update formula."""

import math

import numpy as np
import pytest

from ttadapt import numerics
from ttadapt.errors import (
    DegenerateVectorError,
    DomainError,
    NumericError,
    ParameterError,
    RangeError,
    ShapeError,
)


def naive_matmul(a, b):
    """Scalar triple loop, float32 accumulator, inner index ascending."""
    m, kk = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for j in range(n):
            acc = np.float32(0.0)
            for k in range(kk):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def adamw_reference(w, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """AdamW update transcribed directly, same float32 scalar arithmetic."""
    f = np.float32
    t = t + 1
    m = f(b1) * m + f(1.0 - b1) * g
    v = f(b2) * v + f(1.0 - b2) * g * g
    m_hat = m / f(1.0 - b1**t)
    v_hat = v / f(1.0 - b2**t)
    return w * f(1.0 - lr * wd) - f(lr) * m_hat / (np.sqrt(v_hat) + f(eps))


class TestMatmul:
    def test_matches_triple_loop_bitwise(self):
        rng = numerics.make_rng(7)
        a = rng.uniform(-1.0, 1.0, size=(7, 5)).astype(np.float32)
        b = rng.uniform(-1.0, 1.0, size=(5, 4)).astype(np.float32)
        got = numerics.matmul(a, b)
        want = naive_matmul(a, b)
        np.testing.assert_array_equal(got, want)

    def test_identity(self):
        rng = numerics.make_rng(1)
        a = rng.uniform(-1.0, 1.0, size=(4, 4)).astype(np.float32)
        np.testing.assert_array_equal(numerics.matmul(a, np.eye(4, dtype=np.float32)), a)

    def test_one_by_one(self):
        out = numerics.matmul(np.array([[2.0]], dtype=np.float32), np.array([[3.0]], dtype=np.float32))
        assert out.shape == (1, 1)
        assert out[0, 0] == np.float32(6.0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            numerics.matmul(np.zeros((2, 3), dtype=np.float32), np.zeros((2, 2), dtype=np.float32))

    def test_non_finite_rejected(self):
        bad = np.array([[np.nan, 0.0]], dtype=np.float32)
        with pytest.raises(NumericError):
            numerics.matmul(bad, np.zeros((2, 1), dtype=np.float32))

    def test_near_associativity(self):
        rng = numerics.make_rng(2)
        mats = [rng.uniform(-1.0, 1.0, size=(8, 8)).astype(np.float32) for _ in range(3)]
        a, b, c = mats
        left = numerics.matmul(numerics.matmul(a, b), c)
        right = numerics.matmul(a, numerics.matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-3


class TestSoftmaxRows:
    def test_uniform_row(self):
        out = numerics.softmax_rows(np.array([[0.0, 0.0]], dtype=np.float32), scale=1.0)
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-7)

    def test_log_weights(self):
        row = np.log(np.array([[1.0, 2.0, 3.0]])).astype(np.float32)
        out = numerics.softmax_rows(row, scale=1.0)
        np.testing.assert_allclose(out, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-6)

    def test_single_column(self):
        out = numerics.softmax_rows(np.array([[5.0], [-3.0]], dtype=np.float32))
        np.testing.assert_array_equal(out, [[1.0], [1.0]])

    def test_extreme_values_stay_normalized(self):
        m = np.array([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]], dtype=np.float32)
        out = numerics.softmax_rows(m, scale=1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(axis=1), [1.0, 1.0], atol=1e-5)

    def test_rows_sum_to_one_property(self):
        rng = numerics.make_rng(3)
        m = rng.uniform(-50.0, 50.0, size=(40, 7)).astype(np.float32)
        out = numerics.softmax_rows(m, scale=2.5)
        assert np.all(out >= 0.0)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(40), atol=1e-5)

    def test_scale_must_be_positive(self):
        with pytest.raises(ParameterError):
            numerics.softmax_rows(np.zeros((1, 2), dtype=np.float32), scale=0.0)

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            numerics.softmax_rows(np.zeros((0, 3), dtype=np.float32))

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            numerics.softmax_rows(np.array([[np.inf, 0.0]], dtype=np.float32))


class TestL2Normalize:
    def test_three_four(self):
        out = numerics.l2_normalize(np.array([3.0, 4.0], dtype=np.float32))
        np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-7)

    def test_idempotent_within_tolerance(self):
        rng = numerics.make_rng(4)
        v = numerics.l2_normalize(rng.standard_normal(16, dtype=np.float32))
        again = numerics.l2_normalize(v)
        assert np.max(np.abs(again - v)) <= 1e-7

    def test_zero_vector_degenerate(self):
        with pytest.raises(DegenerateVectorError):
            numerics.l2_normalize(np.zeros(3, dtype=np.float32))

    def test_unit_norm_post(self):
        rng = numerics.make_rng(5)
        for _ in range(50):
            v = rng.uniform(-10.0, 10.0, size=8).astype(np.float32)
            n = float(np.linalg.norm(numerics.l2_normalize(v)))
            assert abs(n - 1.0) <= 1e-6


class TestRenormalizeRows:
    def test_snap_keeps_unit_rows_bitwise(self):
        rng = numerics.make_rng(6)
        m = rng.standard_normal((10, 8), dtype=np.float32)
        once = numerics.renormalize_rows(m)
        twice = numerics.renormalize_rows(once)
        np.testing.assert_array_equal(once, twice)

    def test_normalizes_off_unit_rows(self):
        m = np.array([[3.0, 4.0], [0.0, 2.0]], dtype=np.float32)
        out = numerics.renormalize_rows(m)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), [1.0, 1.0], atol=1e-6)

    def test_zero_row_degenerate(self):
        with pytest.raises(DegenerateVectorError, match="row 1"):
            numerics.renormalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32))


class TestEntropy:
    def test_uniform(self):
        assert abs(numerics.entropy([0.25, 0.25, 0.25, 0.25]) - math.log(4.0)) <= 1e-6

    def test_one_hot_is_zero(self):
        assert numerics.entropy([1.0, 0.0, 0.0]) == 0.0

    def test_two_point(self):
        assert abs(numerics.entropy([0.5, 0.5]) - math.log(2.0)) <= 1e-9

    def test_bad_sum_rejected(self):
        with pytest.raises(DomainError):
            numerics.entropy([0.5, 0.6])

    def test_negative_entry_rejected(self):
        with pytest.raises(DomainError):
            numerics.entropy([1.1, -0.1])

    def test_bounded_by_log_n_over_softmax(self):
        rng = numerics.make_rng(8)
        m = rng.uniform(-4.0, 4.0, size=(200, 6)).astype(np.float32)
        probs = numerics.softmax_rows(m, scale=1.0)
        cap = math.log(6.0)
        for row in probs:
            assert numerics.entropy(row) <= cap + 1e-6

    def test_equality_only_for_constant_rows(self):
        cap = math.log(5.0)
        flat = numerics.softmax_rows(np.full((1, 5), 2.0, dtype=np.float32))[0]
        assert abs(numerics.entropy(flat) - cap) <= 1e-6
        tilted = numerics.softmax_rows(np.array([[0.0, 0.1, 0.0, 0.0, 0.0]], dtype=np.float32))[0]
        assert numerics.entropy(tilted) < cap - 1e-6


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        w = np.array([0.5, -1.5], dtype=np.float32)
        state = numerics.AdamState.zeros_like(w)
        new_w, new_state = numerics.adamw_step(w, np.zeros_like(w), state, lr=0.1)
        np.testing.assert_array_equal(new_w, w)
        assert new_state.t == 1

    def test_decay_only(self):
        w = np.array([2.0, -4.0], dtype=np.float32)
        state = numerics.AdamState.zeros_like(w)
        new_w, _ = numerics.adamw_step(
            w, np.zeros_like(w), state, lr=0.01, weight_decay=0.1
        )
        np.testing.assert_array_equal(new_w, w * np.float32(1.0 - 0.01 * 0.1))

    def test_single_step_matches_reference_formula(self):
        w = np.array([1.0], dtype=np.float32)
        g = np.array([1.0], dtype=np.float32)
        state = numerics.AdamState.zeros_like(w)
        new_w, _ = numerics.adamw_step(w, g, state, lr=0.001)
        want = adamw_reference(
            w.copy(), g.copy(), np.zeros(1, np.float32), np.zeros(1, np.float32), 0, lr=0.001
        )
        assert abs(float(new_w[0]) - float(want[0])) <= 1e-9

    def test_multi_step_matches_reference_formula(self):
        rng = numerics.make_rng(9)
        w = rng.standard_normal(6, dtype=np.float32)
        state = numerics.AdamState.zeros_like(w)
        rw, rm, rv = w.copy(), np.zeros(6, np.float32), np.zeros(6, np.float32)
        for t in range(5):
            g = rng.standard_normal(6, dtype=np.float32)
            w, state = numerics.adamw_step(w, g, state, lr=0.01, weight_decay=0.05)
            f = np.float32
            rm = f(0.9) * rm + f(0.1) * g
            rv = f(0.999) * rv + f(0.001) * g * g
            rw = rw * f(1.0 - 0.01 * 0.05) - f(0.01) * (rm / f(1.0 - 0.9 ** (t + 1))) / (
                np.sqrt(rv / f(1.0 - 0.999 ** (t + 1))) + f(1e-8)
            )
        np.testing.assert_allclose(w, rw, atol=1e-7)

    def test_deterministic_bitwise(self):
        rng = numerics.make_rng(10)
        w = rng.standard_normal((3, 3), dtype=np.float32)
        g = rng.standard_normal((3, 3), dtype=np.float32)
        out1, _ = numerics.adamw_step(w, g, numerics.AdamState.zeros_like(w), lr=0.02)
        out2, _ = numerics.adamw_step(w, g, numerics.AdamState.zeros_like(w), lr=0.02)
        np.testing.assert_array_equal(out1, out2)

    def test_shape_mismatch(self):
        w = np.zeros(3, dtype=np.float32)
        with pytest.raises(ShapeError):
            numerics.adamw_step(w, np.zeros(4, np.float32), numerics.AdamState.zeros_like(w), lr=0.1)


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert numerics.cosine_lr(0, 10, 0.001) == pytest.approx(0.001, abs=1e-12)
        assert numerics.cosine_lr(10, 10, 0.001) == pytest.approx(0.0, abs=1e-12)
        assert numerics.cosine_lr(5, 10, 0.001) == pytest.approx(0.0005, abs=1e-12)

    def test_monotone_nonincreasing(self):
        vals = [numerics.cosine_lr(s, 30, 0.5) for s in range(31)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_step_out_of_range(self):
        with pytest.raises(RangeError):
            numerics.cosine_lr(11, 10, 0.001)
        with pytest.raises(RangeError):
            numerics.cosine_lr(-1, 10, 0.001)

    def test_bad_total(self):
        with pytest.raises(ParameterError):
            numerics.cosine_lr(0, 0, 0.001)


class TestRng:
    def test_same_key_same_stream(self):
        a = numerics.make_rng(42, stream=3).standard_normal(32)
        b = numerics.make_rng(42, stream=3).standard_normal(32)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = numerics.make_rng(42, stream=0).standard_normal(32)
        b = numerics.make_rng(42, stream=1).standard_normal(32)
        assert np.any(a != b)

    def test_seeds_differ(self):
        a = numerics.make_rng(0).standard_normal(32)
        b = numerics.make_rng(1).standard_normal(32)
        assert np.any(a != b)

    def test_seed_bounds(self):
        with pytest.raises(ParameterError):
            numerics.make_rng(-1)
