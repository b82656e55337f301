import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltakws import MacCounter, NumericError, ShapeError, add, gelu, layer_norm, matmul, row_softmax


def naive_matmul(a, b):
    """Triple-loop oracle."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(np.eye(2), b), b)

    def test_identity_both_sides_bit_for_bit(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 5))
        assert np.array_equal(matmul(np.eye(5), a), a)
        assert np.array_equal(matmul(a, np.eye(5)), a)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(123)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_counter_increments(self):
        c = MacCounter()
        matmul(np.ones((5, 4)), np.ones((4, 3)), c)
        assert c.executed == 5 * 4 * 3
        assert c.dense_equivalent == 5 * 4 * 3
        assert c.overhead_ops == 0

    def test_nonfinite_result_rejected(self):
        big = np.full((2, 2), 1e308)
        with pytest.raises(NumericError):
            matmul(big, big)


class TestRowSoftmax:
    def test_uniform(self):
        out = row_softmax(np.array([[0.0, 0.0, 0.0]]))
        assert np.allclose(out, [[1 / 3, 1 / 3, 1 / 3]])

    def test_large_values_no_overflow(self):
        out = row_softmax(np.array([[1000.0, 1000.0]]))
        assert np.allclose(out, [[0.5, 0.5]])

    def test_direct_formula_oracle(self):
        row = np.array([1.0, 2.0, 3.0])
        want = np.exp(row) / np.exp(row).sum()
        got = row_softmax(row.reshape(1, -1))[0]
        assert np.abs(got - want).max() < 1e-12

    def test_rows_sum_to_one_with_wide_spread(self):
        rng = np.random.default_rng(5)
        m = rng.uniform(-700, 700, size=(20, 13))
        out = row_softmax(m)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6
        assert (out >= 0).all()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-700, max_value=700), min_size=1, max_size=16))
    def test_rows_sum_to_one_property(self, row):
        out = row_softmax(np.array([row]))
        assert abs(out.sum() - 1.0) < 1e-6


class TestLayerNorm:
    def test_constant_row_collapses_to_beta(self):
        m = np.full((2, 5), 3.7)
        gamma = np.ones((1, 5))
        beta = np.zeros((1, 5))
        assert np.allclose(layer_norm(m, gamma, beta), 0.0)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((3, 4))
        out = layer_norm(m, np.zeros((1, 4)), np.full((1, 4), 2.5))
        assert np.allclose(out, 2.5)

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((4, 9))
        gamma = rng.standard_normal((1, 9))
        beta = rng.standard_normal((1, 9))
        eps = 1e-6
        want = np.empty_like(m)
        for i in range(m.shape[0]):
            mu = sum(m[i]) / m.shape[1]
            var = sum((v - mu) ** 2 for v in m[i]) / m.shape[1]
            want[i] = (m[i] - mu) / np.sqrt(var + eps) * gamma[0] + beta[0]
        assert np.abs(layer_norm(m, gamma, beta, eps) - want).max() < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(np.zeros((2, 3)), np.ones((1, 4)), np.zeros((1, 3)))


class TestGelu:
    def test_zero(self):
        assert gelu(np.zeros((1, 1)))[0, 0] == 0.0

    def test_asymptotes(self):
        out = gelu(np.array([[30.0, -30.0]]))
        assert abs(out[0, 0] - 30.0) < 1e-12
        assert abs(out[0, 1]) < 1e-12

    def test_phi_of_one(self):
        # Phi(1) from an independent erf evaluation
        import math

        phi1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(phi1 - 0.8413447460685429) < 1e-15
        assert abs(gelu(np.array([[1.0]]))[0, 0] - phi1) < 1e-12


class TestAdd:
    def test_zero_identity(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        assert np.array_equal(add(a, np.zeros((3, 3))), a)

    def test_negation_cancels(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 3))
        assert np.all(add(a, -a) == 0)

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((4, 2))
        b = rng.standard_normal((4, 2))
        want = np.array([[a[i, j] + b[i, j] for j in range(2)] for i in range(4)])
        assert np.array_equal(add(a, b), want)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((2, 2)), np.zeros((3, 2)))


class TestMacCounter:
    @settings(max_examples=50, deadline=None)
    @given(st.tuples(*(st.integers(min_value=0, max_value=10**9) for _ in range(9))))
    def test_merge_commutative_associative(self, vals):
        a = MacCounter(*vals[0:3])
        b = MacCounter(*vals[3:6])
        c = MacCounter(*vals[6:9])
        assert a + b == b + a
        assert (a + b) + c == a + (b + c)

    def test_merge_in_place(self):
        a = MacCounter(1, 2, 3)
        a.merge(MacCounter(10, 20, 30))
        assert a == MacCounter(11, 22, 33)
