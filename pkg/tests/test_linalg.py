import math

import numpy as np
import pytest

from koopman_reach.numerics import (
    SvdResult,
    matrix_exponential,
    svd_factor,
    truncated_pseudoinverse,
)


class TestMatrixExponential:
    def test_zero_matrix_is_identity(self):
        assert np.array_equal(matrix_exponential(np.zeros((2, 2)), 5.0), np.eye(2))

    def test_nilpotent_terminates(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.array_equal(matrix_exponential(a, 1.0), np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_diagonal_matches_scalar_exponential(self):
        r = matrix_exponential(np.diag([-0.05, -0.05]), 2.0)
        expected = math.exp(-0.1)
        assert abs(r[0, 0] - expected) <= math.ulp(expected)
        assert r[0, 1] == 0.0 and r[1, 0] == 0.0

    def test_semigroup_property(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a = rng.uniform(-1, 1, (5, 5))
            a *= 2.0 / max(np.linalg.norm(a, 2), 1e-12)
            s, t = rng.uniform(0.1, 3.0, 2)
            lhs = matrix_exponential(a, s + t)
            rhs = matrix_exponential(a, s) @ matrix_exponential(a, t)
            assert np.linalg.norm(lhs - rhs) < 1e-9

    def test_large_argument_accuracy(self):
        # ||At|| up to ~100: compare against an eigen-decomposition oracle
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.uniform(-1, 1, (4, 4)))
        lam = np.array([-2.0, -1.0, 0.5, 1.5])
        a = q @ np.diag(lam) @ q.T
        t = 40.0
        oracle = q @ np.diag(np.exp(lam * t)) @ q.T
        r = matrix_exponential(a, t)
        assert np.linalg.norm(r - oracle) / np.linalg.norm(oracle) < 1e-12

    def test_non_square_raises(self):
        with pytest.raises(ValueError):
            matrix_exponential(np.ones((2, 3)))


class TestPseudoinverse:
    def test_rank_one_diagonal(self):
        x = np.array([[2.0, 0.0], [0.0, 0.0]])
        assert np.allclose(truncated_pseudoinverse(x), [[0.5, 0.0], [0.0, 0.0]], atol=1e-14)

    def test_identity(self):
        assert np.allclose(truncated_pseudoinverse(np.eye(3)), np.eye(3), atol=1e-14)

    def test_moore_penrose_identities(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 4))
        p = truncated_pseudoinverse(x)
        assert np.linalg.norm(p @ x @ p - p) < 1e-9
        assert np.linalg.norm(x @ p @ x - x) < 1e-9

    def test_tall_full_rank_left_inverse(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((10, 4))
        p = truncated_pseudoinverse(x)
        assert np.linalg.norm(p @ x - np.eye(4)) < 1e-8

    def test_rank_mode(self):
        x = np.diag([4.0, 2.0, 1e-3])
        p = truncated_pseudoinverse(x, rank=2)
        assert np.allclose(np.diag(p), [0.25, 0.5, 0.0])

    def test_energy_mode_keeps_prefix(self):
        x = np.diag([10.0, 1.0, 1.0])
        # sigma^2 = [100, 1, 1]; 100/102 > 0.9, so energy 0.9 keeps only one mode
        p = truncated_pseudoinverse(x, energy=0.9)
        assert np.allclose(np.diag(p), [0.1, 0.0, 0.0])

    def test_noise_floor_always_dropped(self):
        x = np.diag([1.0, 1e-14])
        p = truncated_pseudoinverse(x, energy=1.0)
        assert p[1, 1] == 0.0

    def test_all_zero_raises(self):
        with pytest.raises(ValueError):
            truncated_pseudoinverse(np.zeros((3, 3)))

    def test_rank_and_energy_conflict(self):
        with pytest.raises(ValueError):
            truncated_pseudoinverse(np.eye(2), rank=1, energy=0.5)


class TestSvd:
    def test_factor_orthonormal_and_sorted(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((7, 5))
        f = svd_factor(a)
        assert (np.diff(f.singular_values) <= 0).all()
        assert np.linalg.norm(f.u.T @ f.u - np.eye(5)) < 1e-10
        assert np.linalg.norm(f.v.T @ f.v - np.eye(5)) < 1e-10
        assert np.allclose(f.u @ np.diag(f.singular_values) @ f.v.T, a, atol=1e-10)

    def test_result_validates_order(self):
        with pytest.raises(ValueError):
            SvdResult(np.eye(2), np.array([1.0, 2.0]), np.eye(2))
