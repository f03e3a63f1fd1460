import numpy as np
import pytest

from perf_fl.linalg import pseudo_inverse, top_right_singular_vector


def penrose_defect(a, a_pinv):
    """Max relative violation of the four Moore-Penrose identities."""
    scale = max(np.linalg.norm(a), 1.0)
    checks = [
        np.linalg.norm(a @ a_pinv @ a - a) / scale,
        np.linalg.norm(a_pinv @ a @ a_pinv - a_pinv) / max(np.linalg.norm(a_pinv), 1.0),
        np.linalg.norm((a @ a_pinv).T - a @ a_pinv) / scale,
        np.linalg.norm((a_pinv @ a).T - a_pinv @ a) / scale,
    ]
    return max(checks)


class TestPseudoInverse:
    def test_diagonal_rank_one(self):
        out = pseudo_inverse(np.array([[2.0, 0.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.0], [0.0, 0.0]], atol=1e-12)

    def test_row_vector_formula(self):
        # pinv of a row vector is A^T / ||A||^2
        out = pseudo_inverse(np.array([[-0.2, -0.1]]))
        np.testing.assert_allclose(out, [[-4.0], [-2.0]], rtol=1e-12)

    def test_penrose_identities_random(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            a = rng.normal(size=(4, 3))
            assert penrose_defect(a, pseudo_inverse(a)) < 1e-8

    def test_double_pinv_recovers_full_rank(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.normal(size=(5, 3))
            np.testing.assert_allclose(pseudo_inverse(pseudo_inverse(a)), a, atol=1e-6)

    def test_rank_tol_zeroing(self):
        # singular values at or below rank_tol * s_max are dropped
        a = np.diag([1.0, 1e-13])
        out = pseudo_inverse(a, rank_tol=1e-10)
        np.testing.assert_allclose(out, np.diag([1.0, 0.0]), atol=1e-12)

    def test_zero_matrix(self):
        out = pseudo_inverse(np.zeros((3, 2)))
        assert out.shape == (2, 3)
        assert np.all(out == 0.0)


class TestTopRightSingularVector:
    def test_single_direction_data(self):
        a = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]])
        v = top_right_singular_vector(a)
        np.testing.assert_allclose(v, [1.0, 0.0], atol=1e-12)

    def test_identity_tie_accepts_basis_vector(self):
        v = top_right_singular_vector(np.eye(2))
        assert v is not None
        hits = np.isclose(np.abs(v), 1.0, atol=1e-12)
        assert hits.sum() == 1 and np.isclose(np.linalg.norm(v), 1.0)

    def test_single_row_normalized(self):
        v = top_right_singular_vector(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(v, [0.6, 0.8], rtol=1e-12)

    def test_degenerate_zero_matrix(self):
        assert top_right_singular_vector(np.zeros((4, 2))) is None

    def test_sign_canonicalized(self):
        a = np.array([[-3.0, -4.0]])
        v = top_right_singular_vector(a)
        assert v[0] > 0  # first non-negligible component positive

    def test_maximality_over_random_directions(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = rng.normal(size=(30, 4))
            v = top_right_singular_vector(a)
            best = np.linalg.norm(a @ v)
            for _ in range(100):
                u = rng.normal(size=4)
                u /= np.linalg.norm(u)
                assert np.linalg.norm(a @ u) <= best + 1e-9
