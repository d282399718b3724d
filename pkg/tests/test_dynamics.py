import numpy as np
import pytest
from scipy import stats

from lowems.core import RandomStream
from lowems.dynamics import generate_truth, random_orthonormal


class TestRandomOrthonormal:
    def test_columns_orthonormal(self):
        q = random_orthonormal(20, 6, RandomStream(1))
        np.testing.assert_allclose(q.T @ q, np.eye(6), atol=1e-12)

    def test_deterministic(self):
        a = random_orthonormal(10, 3, RandomStream(2))
        b = random_orthonormal(10, 3, RandomStream(2))
        np.testing.assert_array_equal(a, b)

    def test_validation(self):
        with pytest.raises(ValueError):
            random_orthonormal(3, 5, RandomStream(3))
        with pytest.raises(ValueError):
            random_orthonormal(3, 0, RandomStream(3))


class TestGenerateTruth:
    def test_shapes_and_factorization(self):
        truth = generate_truth(12, 9, 3, 4, 0.2, RandomStream(7))
        assert truth.U.shape == (12, 3)
        assert len(truth.V_seq) == 4 and len(truth.X_seq) == 4
        for v, x in zip(truth.V_seq, truth.X_seq):
            assert v.shape == (9, 3)
            np.testing.assert_array_equal(x, truth.U @ v.T)
        assert truth.n1 == 12 and truth.n2 == 9
        assert truth.rank == 3 and truth.d == 4

    def test_snapshots_have_planted_rank(self):
        truth = generate_truth(15, 11, 4, 3, 0.5, RandomStream(8))
        for x in truth.X_seq:
            s = np.linalg.svd(x, compute_uv=False)
            assert s[3] > 1e-8
            assert s[4] < 1e-10 * s[0]

    def test_zero_drift_freezes_the_matrix(self):
        truth = generate_truth(10, 8, 2, 5, 0.0, RandomStream(9))
        for x in truth.X_seq[1:]:
            np.testing.assert_array_equal(x, truth.X_seq[0])

    def test_prefix_stability_across_horizon(self):
        short = generate_truth(10, 8, 2, 2, 0.3, RandomStream(10))
        long = generate_truth(10, 8, 2, 6, 0.3, RandomStream(10))
        np.testing.assert_array_equal(short.U, long.U)
        for t in range(2):
            np.testing.assert_array_equal(short.V_seq[t], long.V_seq[t])

    def test_increment_variance_chi_square(self):
        # The pooled squared increments over all steps are sigma2^2 * chi2.
        n2, rank, d, sigma2 = 50, 4, 6, 0.7
        truth = generate_truth(8, n2, rank, d, sigma2, RandomStream(11))
        diffs = [truth.V_seq[t + 1] - truth.V_seq[t] for t in range(d - 1)]
        q = sum(float(np.sum(e**2)) for e in diffs) / sigma2**2
        dof = n2 * rank * (d - 1)
        assert dof >= 1000
        lo, hi = stats.chi2.ppf([0.005, 0.995], dof)
        assert lo <= q <= hi

    def test_mean_increment_energy(self):
        n2, rank, sigma2 = 6, 2, 0.4
        total = 0.0
        for seed in range(200):
            truth = generate_truth(5, n2, rank, 2, sigma2, RandomStream(seed))
            total += float(np.sum((truth.V_seq[1] - truth.V_seq[0]) ** 2))
        mean = total / 200
        expected = n2 * rank * sigma2**2
        assert abs(mean - expected) <= 0.10 * expected

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_truth(5, 5, 2, 0, 0.1, RandomStream(0))
        with pytest.raises(ValueError):
            generate_truth(5, 5, 0, 2, 0.1, RandomStream(0))
        with pytest.raises(ValueError):
            generate_truth(5, 5, 2, 2, -0.1, RandomStream(0))
        with pytest.raises(ValueError):
            generate_truth(5, 4, 5, 2, 0.1, RandomStream(0))
