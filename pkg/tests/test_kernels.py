"""Kernel contracts: exact reproducibility, branch safety, tie rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mambapress import kernels


def naive_matmul_f32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scalar triple loop accumulating left-to-right in float32."""
    m, k = a.shape
    p = b.shape[1]
    out = np.zeros((m, p), dtype=np.float32)
    for i in range(m):
        for j in range(p):
            acc = np.float32(0.0)
            for t in range(k):
                acc = np.float32(acc + np.float32(a[i, t] * b[t, j]))
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        assert np.array_equal(kernels.matmul(np.eye(2, dtype=np.float32), x), x)

    def test_selector(self):
        a = np.array([[1.0, 0.0]], dtype=np.float32)
        b = np.array([[0.0], [5.0]], dtype=np.float32)
        assert np.array_equal(kernels.matmul(a, b), np.array([[0.0]], dtype=np.float32))

    def test_matches_triple_loop_exactly(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((7, 5)).astype(np.float32)
        b = rng.standard_normal((5, 3)).astype(np.float32)
        assert np.array_equal(kernels.matmul(a, b), naive_matmul_f32(a, b))

    def test_matches_triple_loop_many_shapes(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m, k, p = rng.integers(1, 9, size=3)
            a = (rng.standard_normal((m, k)) * 4).astype(np.float32)
            b = (rng.standard_normal((k, p)) * 4).astype(np.float32)
            assert np.array_equal(kernels.matmul(a, b), naive_matmul_f32(a, b))

    def test_identity_property_random(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((9, 6)).astype(np.float32)
        assert np.array_equal(kernels.matmul(np.eye(9, dtype=np.float32), x), x)

    def test_shape_mismatch_names_both_shapes(self):
        a = np.zeros((2, 3), dtype=np.float32)
        b = np.zeros((4, 2), dtype=np.float32)
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
            kernels.matmul(a, b)

    def test_finite_outputs(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((12, 20)).astype(np.float32)
        b = rng.standard_normal((20, 4)).astype(np.float32)
        assert np.all(np.isfinite(kernels.matmul(a, b)))


class TestSoftplus:
    def test_zero(self):
        out = kernels.softplus(np.float32(0.0))
        assert abs(float(out) - np.log(2.0)) < 1e-6

    def test_large_input_uses_identity_branch(self):
        out = kernels.softplus(np.float32(30.0))
        assert abs(float(out) - 30.0) < 1e-6

    def test_very_negative_stays_positive(self):
        # High-precision reference: ln(1 + e^-30) evaluated in float64.
        expect = np.log1p(np.exp(np.float64(-30.0)))
        out = float(kernels.softplus(np.float32(-30.0)))
        assert out > 0.0
        assert abs(out - expect) < 1e-15

    def test_extreme_negative_clamped_positive(self):
        out = kernels.softplus(np.array([-200.0, -1000.0], dtype=np.float32))
        assert np.all(out > 0.0)

    @given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
    def test_strictly_positive(self, x):
        assert float(kernels.softplus(np.float32(x))) > 0.0

    def test_monotone_on_grid(self):
        grid = np.linspace(-50, 50, 4001, dtype=np.float32)
        vals = kernels.softplus(grid)
        assert np.all(np.diff(vals) >= 0.0)


class TestCosineSimilarity:
    def test_identical_direction(self):
        assert kernels.cosine_similarity([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert kernels.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_zero_norm_guard(self):
        assert kernels.cosine_similarity([1.0, 0.0], [0.0, 0.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            kernels.cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_range(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            a = rng.standard_normal(rng.integers(1, 24)).astype(np.float32)
            b = rng.standard_normal(len(a)).astype(np.float32)
            c = kernels.cosine_similarity(a, b)
            assert -1.0 - 1e-6 <= c <= 1.0 + 1e-6

    def test_matrix_matches_scalar_bitwise(self):
        rng = np.random.default_rng(17)
        a = (rng.standard_normal((6, 9)) * 3).astype(np.float32)
        b = (rng.standard_normal((4, 9)) * 3).astype(np.float32)
        mat = kernels.cosine_matrix(a, b)
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                assert mat[i, j] == np.float32(kernels.cosine_similarity(a[i], b[j]))

    def test_matrix_zero_norm_rows(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=np.float32)
        b = np.array([[1.0, 1.0]], dtype=np.float32)
        mat = kernels.cosine_matrix(a, b)
        assert mat[0, 0] == 0.0
        assert mat[1, 0] != 0.0


def argsort_desc_oracle(values: np.ndarray) -> list[int]:
    """O(n^2) selection: repeatedly take the max, earliest index first."""
    vals = list(values)
    remaining = list(range(len(vals)))
    order = []
    while remaining:
        best = remaining[0]
        for idx in remaining[1:]:
            if vals[idx] > vals[best]:
                best = idx
        order.append(best)
        remaining.remove(best)
    return order


class TestArgsortDesc:
    def test_basic(self):
        assert list(kernels.argsort_desc([0.1, 0.9, 0.5])) == [1, 2, 0]

    def test_tie_stability(self):
        assert list(kernels.argsort_desc([0.5, 0.5, 0.5])) == [0, 1, 2]

    def test_against_selection_oracle(self):
        rng = np.random.default_rng(19)
        values = rng.choice([0.1, 0.2, 0.3, 0.7], size=100).astype(np.float32)
        assert list(kernels.argsort_desc(values)) == argsort_desc_oracle(values)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            kernels.argsort_desc([1.0, np.nan])

    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6, width=32), max_size=40))
    @settings(max_examples=60)
    def test_is_permutation(self, values):
        order = kernels.argsort_desc(np.array(values, dtype=np.float32))
        assert sorted(order) == list(range(len(values)))


class TestConvAndNorm:
    def test_causal_conv_manual(self):
        # Single channel, taps [k0, k1]; out[t] = k1*x[t] + k0*x[t-1].
        x = np.array([[1.0], [2.0], [3.0]], dtype=np.float32)
        kernel = np.array([[10.0, 1.0]], dtype=np.float32)
        out = kernels.causal_conv(x, kernel)
        assert np.allclose(out[:, 0], [1.0, 12.0, 23.0])

    def test_causal_conv_zero_history(self):
        x = np.zeros((5, 3), dtype=np.float32)
        x[2] = 1.0
        kernel = np.ones((3, 4), dtype=np.float32)
        out = kernels.causal_conv(x, kernel)
        # The impulse at t=2 is visible for width=4 steps starting there.
        assert np.allclose(out[:, 0], [0, 0, 1, 1, 1])

    def test_layernorm_zero_mean_unit_var(self):
        rng = np.random.default_rng(23)
        x = rng.standard_normal((4, 64)).astype(np.float32)
        out = kernels.layernorm(x, np.ones(64, np.float32), np.zeros(64, np.float32))
        assert np.allclose(out.mean(axis=1), 0.0, atol=1e-5)
        assert np.allclose(out.std(axis=1), 1.0, atol=1e-2)

    def test_rowdot_matches_einsum(self):
        rng = np.random.default_rng(29)
        a = rng.standard_normal((8, 5)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        assert np.allclose(kernels.rowdot(a, b), np.einsum("ij,j->i", a, b), atol=1e-6)


class TestFlopCounter:
    def test_matmul_cost(self):
        with kernels.count_flops() as counter:
            kernels.matmul(np.zeros((3, 4), np.float32), np.zeros((4, 5), np.float32))
        assert counter.total == 2 * 3 * 4 * 5
        assert counter.by_op["matmul"] == counter.total

    def test_elementwise_costs(self):
        x = np.zeros((6, 7), np.float32)
        with kernels.count_flops() as counter:
            kernels.add(x, x)
            kernels.multiply(x, x)
            kernels.exp(x)
            kernels.silu(x)
            kernels.softplus(x)
            kernels.layernorm(x, np.ones(7, np.float32), np.zeros(7, np.float32))
            kernels.causal_conv(x, np.ones((7, 4), np.float32))
        n = x.size
        assert counter.by_op["add"] == n
        assert counter.by_op["multiply"] == n
        assert counter.by_op["exp"] == n
        assert counter.by_op["silu"] == n
        assert counter.by_op["softplus"] == n
        assert counter.by_op["layernorm"] == 7 * n
        assert counter.by_op["causal_conv"] == 2 * 4 * n

    def test_similarity_and_sorting_tally_nothing(self):
        rng = np.random.default_rng(31)
        a = rng.standard_normal((5, 8)).astype(np.float32)
        with kernels.count_flops() as counter:
            kernels.cosine_matrix(a, a)
            kernels.cosine_similarity(a[0], a[1])
            kernels.argsort_desc(a[:, 0])
        assert counter.total == 0

    def test_inactive_by_default(self):
        before = kernels._ACTIVE
        kernels.matmul(np.zeros((2, 2), np.float32), np.zeros((2, 2), np.float32))
        assert kernels._ACTIVE is before is None

    def test_nesting_rejected(self):
        with kernels.count_flops():
            with pytest.raises(RuntimeError, match="already active"):
                with kernels.count_flops():
                    pass
