import numpy as np
import pytest

from enlstm.linalg import cross_covariance, ensemble_mean, spd_solve


class TestEnsembleMean:
    def test_single_sample_is_its_own_mean(self):
        assert np.array_equal(ensemble_mean(np.array([[1.0, 3.0]])), [1.0, 3.0])

    def test_midpoint(self):
        assert np.array_equal(
            ensemble_mean(np.array([[0.0, 0.0], [2.0, 4.0]])), [1.0, 2.0]
        )

    def test_three_scalars(self):
        assert ensemble_mean(np.array([[1.0], [2.0], [3.0]])) == pytest.approx([2.0])

    def test_empty_ensemble(self):
        with pytest.raises(ValueError, match="empty ensemble"):
            ensemble_mean(np.empty((0, 3)))


class TestCrossCovariance:
    def test_identical_predictions_give_zero(self):
        # the over-convergence limit: no spread on one side kills the matrix
        a = np.random.default_rng(0).normal(size=(5, 3))
        b = np.tile([1.5, -2.0], (5, 1))
        assert np.all(cross_covariance(a, b) == 0.0)

    def test_hand_evaluated_pair(self):
        a = np.array([[0.0], [2.0]])
        b = np.array([[0.0], [4.0]])
        assert np.allclose(cross_covariance(a, b), [[4.0]], atol=0)

    def test_self_covariance_is_sample_variance(self):
        a = np.array([[0.0], [2.0]])
        assert np.allclose(cross_covariance(a, a), [[2.0]], atol=0)

    def test_single_member_rejected(self):
        with pytest.raises(ValueError, match="covariance undefined"):
            cross_covariance(np.ones((1, 2)), np.ones((1, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_transpose_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(12, 7))
        b = rng.normal(size=(12, 4))
        assert np.allclose(
            cross_covariance(a, b), cross_covariance(b, a).T, atol=1e-12, rtol=0
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_self_covariance_psd(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(6, 10))  # rank deficient on purpose
        cov = cross_covariance(a, a)
        assert np.allclose(cov, cov.T, atol=1e-12)
        eigs = np.linalg.eigvalsh(cov)
        assert eigs.min() >= -1e-10 * np.trace(cov)

    @pytest.mark.parametrize("seed", range(5))
    def test_translation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(9, 5))
        b = rng.normal(size=(9, 3))
        shift = rng.normal(size=5)
        assert np.allclose(
            cross_covariance(a, b), cross_covariance(a + shift, b), atol=1e-10
        )


class TestSpdSolve:
    def test_identity_system(self):
        r = np.random.default_rng(1).normal(size=(4, 2))
        x, jitter = spd_solve(np.eye(4), r)
        assert jitter == 0.0
        assert np.allclose(x, r, atol=1e-12)

    def test_scalar_division(self):
        x, _ = spd_solve(np.array([[4.0]]), np.array([[2.0]]))
        assert np.allclose(x, [[0.5]], atol=1e-15)

    def test_diagonal_inverse(self):
        x, _ = spd_solve(2.0 * np.eye(2), np.eye(2))
        assert np.allclose(x, 0.5 * np.eye(2))

    @pytest.mark.parametrize("seed", range(4))
    def test_residual_bound_without_jitter(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(8, 8))
        s = m @ m.T + 8 * np.eye(8)
        r = rng.normal(size=(8, 3))
        x, jitter = spd_solve(s, r)
        assert jitter == 0.0
        resid = np.abs(s @ x - r).max()
        assert resid <= 1e-8 * (1 + np.abs(r).max())

    def test_rank_deficient_uses_jitter(self):
        v = np.array([[1.0, 2.0, 3.0]])
        s = v.T @ v  # rank one, singular
        r = np.ones((3, 1))
        x, jitter = spd_solve(s, r)
        assert jitter > 0.0
        assert np.all(np.isfinite(x))

    def test_hopeless_matrix_raises(self):
        with pytest.raises(RuntimeError, match="singular system"):
            spd_solve(-np.eye(3), np.ones((3, 1)))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            spd_solve(np.array([[1.0, 5.0], [0.0, 1.0]]), np.eye(2))
