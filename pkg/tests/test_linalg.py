import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from consensuslab.linalg import (check_symmetric, kron, lambda_max, lambda_min, max_abs_eig,
                                 min_abs_eig, spectral_norm, sym_eigen, sym_expm)

from conftest import charpoly_roots, taylor_expm


def random_symmetric(rng, m, scale=1.0):
    A = rng.standard_normal((m, m)) * scale
    return 0.5 * (A + A.T)


class TestSymEigen:
    def test_diagonal(self):
        w, V = sym_eigen(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_array_equal(w, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(np.abs(V), np.eye(3)[:, [1, 2, 0]], atol=1e-15)

    def test_two_by_two(self):
        w, _ = sym_eigen([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-15)

    def test_random_4x4_matches_charpoly_roots(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            M = random_symmetric(rng, 4)
            np.testing.assert_allclose(sym_eigen(M)[0], charpoly_roots(M), atol=1e-10)

    def test_reconstruction_1000_random(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            m = int(rng.integers(1, 13))
            M = random_symmetric(rng, m, scale=10.0 ** rng.uniform(-3, 3))
            w, V = sym_eigen(M)
            scale = 1.0 + np.abs(M).max()
            assert np.abs((V * w) @ V.T - M).max() <= 1e-10 * scale
            assert np.abs(V.T @ V - np.eye(m)).max() <= 1e-10
            assert np.all(np.diff(w) >= 0)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError, match="not symmetric"):
            sym_eigen([[1.0, 2.0], [0.0, 1.0]])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            sym_eigen([[np.nan, 0.0], [0.0, 1.0]])

    def test_symmetry_tolerance_is_relative(self):
        M = np.array([[1e6, 1.0], [1.0 + 1e-7, 2e6]])
        check_symmetric(M)
        with pytest.raises(ValueError):
            check_symmetric(np.array([[1.0, 1.0], [1.0 + 1e-7, 2.0]]))


class TestKron:
    def test_identity(self):
        np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_scalar(self):
        M = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(kron([[2.0]], M), 2 * M)

    def test_mixed_product(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            A, B, C, D = (rng.standard_normal((2, 2)) for _ in range(4))
            lhs = kron(A, B) @ kron(C, D)
            rhs = kron(A @ C, B @ D)
            assert np.abs(lhs - rhs).max() <= 1e-12

    def test_block_structure_by_hand(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0]])
        B = np.array([[0.0, 5.0]])
        expected = np.array([[0, 5, 0, 10], [0, 15, 0, 20]], dtype=float)
        np.testing.assert_array_equal(kron(A, B), expected)


class TestSymExpm:
    def test_zero(self):
        np.testing.assert_array_equal(sym_expm(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(sym_expm(np.diag([np.log(2.0), 0.0])), np.diag([2.0, 1.0]),
                                   rtol=1e-15)

    def test_matches_taylor(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            M = random_symmetric(rng, 3)
            E = sym_expm(M)
            assert np.abs(E - taylor_expm(M)).max() <= 1e-9 * max(1.0, np.abs(E).max())

    def test_inverse_pair(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            M = random_symmetric(rng, int(rng.integers(1, 8)))
            M *= 5.0 / max(np.linalg.norm(M, 2), 1e-300)
            assert np.abs(sym_expm(-M) @ sym_expm(M) - np.eye(M.shape[0])).max() <= 1e-8

    def test_positive_definite_output(self):
        rng = np.random.default_rng(13)
        E = sym_expm(random_symmetric(rng, 5, 3.0))
        assert lambda_min(E) > 0
        np.testing.assert_array_equal(E, E.T)

    def test_overflow(self):
        with pytest.raises(OverflowError):
            sym_expm(np.diag([800.0, 0.0]))


class TestEigenvalueModuli:
    def test_min_abs(self):
        assert min_abs_eig(np.diag([-2.0, 3.0])) == 2.0
        assert min_abs_eig(np.zeros((2, 2))) == 0.0
        assert min_abs_eig(np.diag([-2.0, -2.0])) == 2.0

    def test_symmetrize_uses_symmetric_part(self):
        M = np.array([[1.0, 4.0], [0.0, 1.0]])     # symmetric part has eigenvalues -1, 3
        assert min_abs_eig(M, symmetrize=True) == pytest.approx(1.0)
        assert min_abs_eig(M) == pytest.approx(1.0)
        assert max_abs_eig(M, symmetrize=True) == pytest.approx(3.0)

    def test_extremes_and_norm(self):
        M = np.diag([-4.0, 1.0, 2.0])
        assert lambda_min(M) == -4.0 and lambda_max(M) == 2.0
        assert spectral_norm(M) == pytest.approx(4.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
    def test_min_abs_diag_property(self, values):
        assert min_abs_eig(np.diag(values)) == pytest.approx(min(abs(v) for v in values))
