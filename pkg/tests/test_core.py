"""Base type validation and nearest-code assignment against brute-force scans."""

import numpy as np
import pytest

from rqgmm.core import (
    Codebook,
    EmbeddingMatrix,
    ResidualVector,
    as_f64_matrix,
    nearest_code,
    nearest_codes,
    residual_step,
    squared_distances,
)
from rqgmm.errors import DegenerateFitWarning, InputError


def brute_nearest(row, vectors):
    """Reference scan: squared distance to every vector, first minimum wins."""
    best_i = 0
    best_d = None
    for i, v in enumerate(vectors):
        d = 0.0
        for a, b in zip(row, v):
            d += (a - b) ** 2
        if best_d is None or d < best_d:
            best_d = d
            best_i = i
    return best_i, best_d


class TestEmbeddingMatrix:
    def test_accepts_contiguous_f64(self):
        x = np.zeros((3, 2))
        m = EmbeddingMatrix(x)
        assert m.n == 3 and m.d == 2

    def test_rejects_nan_and_inf(self):
        with pytest.raises(InputError):
            EmbeddingMatrix(np.array([[np.nan, 0.0]]))
        with pytest.raises(InputError):
            EmbeddingMatrix(np.array([[np.inf, 0.0]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(InputError):
            EmbeddingMatrix(np.zeros(4))
        with pytest.raises(InputError):
            EmbeddingMatrix(np.zeros((2, 2, 2)))

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            EmbeddingMatrix(np.zeros((0, 4)))

    def test_data_is_write_locked(self):
        m = EmbeddingMatrix(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            m.data[0, 0] = 1.0

    def test_upcasts_f32(self):
        m = EmbeddingMatrix(np.zeros((2, 2), dtype=np.float32))
        assert m.data.dtype == np.float64


class TestResidualVector:
    def test_level_must_be_non_negative(self):
        with pytest.raises(InputError):
            ResidualVector(np.zeros(3), level=-1)

    def test_carries_dimension(self):
        r = ResidualVector(np.zeros(5), level=0)
        assert r.d == 5


class TestCodebook:
    def test_duplicate_rows_warn(self):
        vecs = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
        with pytest.warns(DegenerateFitWarning):
            Codebook(vecs).warn_if_degenerate()

    def test_distinct_rows_do_not_warn(self):
        rng = np.random.default_rng(0)
        cb = Codebook(rng.normal(size=(16, 4)))
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            cb.warn_if_degenerate()


class TestSquaredDistances:
    def test_never_negative(self):
        """The direct (a-b)^2 form cannot produce negative distances,
        unlike the expanded |a|^2 - 2ab + |b|^2 form."""
        rng = np.random.default_rng(7)
        # Nearly identical points magnify cancellation in the expanded form.
        base = rng.normal(size=(50, 8)) * 1e8
        rows = base + rng.normal(size=(50, 8)) * 1e-8
        d2 = squared_distances(rows, base)
        assert np.all(d2 >= 0)

    def test_matches_scalar_computation(self):
        rng = np.random.default_rng(1)
        rows = rng.normal(size=(10, 3))
        vecs = rng.normal(size=(4, 3))
        d2 = squared_distances(rows, vecs)
        for i in range(10):
            for j in range(4):
                expected = sum((rows[i, c] - vecs[j, c]) ** 2 for c in range(3))
                np.testing.assert_allclose(d2[i, j], expected, rtol=1e-12)


class TestNearestCodes:
    def test_matches_brute_force_scan(self):
        """Random instances agree exactly with a per-row linear scan."""
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            k = int(rng.integers(1, 20))
            d = int(rng.integers(1, 6))
            rows = rng.normal(size=(n, d))
            vecs = rng.normal(size=(k, d))
            idx, dmin2 = nearest_codes(rows, vecs)
            for i in range(n):
                bi, bd = brute_nearest(rows[i], vecs)
                assert idx[i] == bi
                np.testing.assert_allclose(dmin2[i], bd, rtol=1e-12, atol=1e-300)

    def test_tie_breaks_to_lowest_index(self):
        rows = np.array([[0.0, 0.0]])
        vecs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        idx, _ = nearest_codes(rows, vecs)
        assert idx[0] == 0

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(3)
        rows = rng.normal(size=(10000, 6))
        vecs = rng.normal(size=(32, 6))
        i1, d1 = nearest_codes(rows, vecs, threads=1)
        i4, d4 = nearest_codes(rows, vecs, threads=4)
        assert np.array_equal(i1, i4)
        assert np.array_equal(d1, d4)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            nearest_codes(np.zeros((2, 3)), np.zeros((2, 4)))


class TestNearestCode:
    def test_exact_member_hit(self):
        """A residual equal to a codebook vector selects it at distance 0."""
        cb = Codebook(np.array([[1.0, 1.0], [3.0, -2.0], [0.5, 0.5]]))
        idx, vec = nearest_code(np.array([3.0, -2.0]), cb)
        assert idx == 1
        np.testing.assert_array_equal(vec, [3.0, -2.0])

    def test_returned_vector_is_a_copy(self):
        cb = Codebook(np.array([[1.0, 1.0], [2.0, 2.0]]))
        _, vec = nearest_code(np.array([1.0, 1.0]), cb)
        vec[0] = 99.0
        assert cb.vectors[0, 0] == 1.0

    def test_empty_residual_dimension_mismatch(self):
        cb = Codebook(np.array([[1.0, 1.0]]))
        with pytest.raises(InputError):
            nearest_code(np.array([1.0, 2.0, 3.0]), cb)


class TestResidualStep:
    def test_advances_level(self):
        r = ResidualVector(np.array([1.0, 2.0]), level=0)
        r2 = residual_step(r, np.array([0.5, 0.5]))
        assert r2.level == 1
        np.testing.assert_array_equal(r2.values, [0.5, 1.5])

    def test_exact_on_dyadic_values(self):
        """Subtraction of dyadic rationals is exact, so adding the code
        vector back reconstructs the original bit for bit."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            a = rng.integers(-1000, 1000, size=6) / 64.0
            b = rng.integers(-1000, 1000, size=6) / 64.0
            r = ResidualVector(a, level=2)
            stepped = residual_step(r, b)
            assert np.array_equal(stepped.values + b, a)

    def test_close_on_arbitrary_floats(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=50)
        b = rng.normal(size=50)
        stepped = residual_step(ResidualVector(a, level=0), b)
        np.testing.assert_allclose(stepped.values + b, a, rtol=1e-15, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            residual_step(ResidualVector(np.zeros(3), level=0), np.zeros(4))


class TestValidators:
    def test_rejects_non_numeric(self):
        with pytest.raises(InputError):
            as_f64_matrix([["a", "b"]])

    def test_accepts_nested_lists(self):
        m = as_f64_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float64 and m.shape == (2, 2)
