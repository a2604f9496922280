import math
import random

import pytest

from lorank import linalg
from lorank.errors import NumericError, ShapeError
from lorank.linalg import Matrix, Rng


def _random_matrix(rnd, rows, cols, lo=-2.0, hi=2.0):
    return Matrix.from_rows(
        [[rnd.uniform(lo, hi) for _ in range(cols)] for _ in range(rows)]
    )


class TestMatmul:
    def test_identity(self):
        rnd = random.Random(0)
        m = _random_matrix(rnd, 2, 2)
        assert linalg.matmul(Matrix.identity(2), m) == m
        assert linalg.matmul(m, Matrix.identity(2)) == m

    def test_hand_example(self):
        a = Matrix.from_rows([[1, 2], [3, 4]])
        b = Matrix.from_rows([[1], [1]])
        assert linalg.matmul(a, b).to_rows() == [[3.0], [7.0]]

    def test_zero_annihilates(self):
        rnd = random.Random(1)
        m = _random_matrix(rnd, 3, 3)
        z = Matrix.zeros(3, 3)
        assert linalg.matmul(z, m) == Matrix.zeros(3, 3)
        assert linalg.matmul(m, z) == Matrix.zeros(3, 3)

    def test_shape_error_names_both_shapes(self):
        a, b = Matrix.zeros(2, 3), Matrix.zeros(2, 3)
        with pytest.raises(ShapeError) as err:
            linalg.matmul(a, b)
        assert "(2, 3)" in str(err.value)

    def test_nonfinite_rejected(self):
        a = Matrix.from_rows([[1e308, 1e308]])
        b = Matrix.from_rows([[1e308], [1e308]])
        with pytest.raises(NumericError):
            linalg.matmul(a, b)

    def test_associativity(self):
        rnd = random.Random(2)
        for _ in range(25):
            a = _random_matrix(rnd, 4, 3)
            b = _random_matrix(rnd, 3, 5)
            c = _random_matrix(rnd, 5, 2)
            left = linalg.matmul(linalg.matmul(a, b), c)
            right = linalg.matmul(a, linalg.matmul(b, c))
            for x, y in zip(left.data, right.data):
                assert abs(x - y) <= 1e-9 * max(1.0, abs(x), abs(y))

    def test_scaled_transpose_identity(self):
        rnd = random.Random(3)
        for alpha in (0.5, -1.75, 3.0):
            m = _random_matrix(rnd, 4, 3)
            n = _random_matrix(rnd, 4, 5)
            left = linalg.matmul(linalg.scale(m, alpha).transpose(), n)
            right = linalg.scale(linalg.matmul(m.transpose(), n), alpha)
            for x, y in zip(left.data, right.data):
                assert abs(x - y) <= 1e-12 * max(1.0, abs(x), abs(y))

    def test_matmul_t_matches_transpose(self):
        rnd = random.Random(4)
        a = _random_matrix(rnd, 5, 3)
        b = _random_matrix(rnd, 5, 2)
        assert linalg.matmul_t(a, b) == linalg.matmul(a.transpose(), b)


class TestOuter:
    def test_hand_example(self):
        u = Matrix.column([1, -1])
        v = Matrix.column([2, 3])
        assert linalg.outer(u, v).to_rows() == [[2.0, 3.0], [-2.0, -3.0]]

    def test_zero_vector(self):
        assert linalg.outer(Matrix.column([0, 0]), Matrix.column([1, 2])) == Matrix.zeros(2, 2)

    def test_one_by_one(self):
        assert linalg.outer(Matrix.column([3.0]), Matrix.column([4.0])).to_rows() == [[12.0]]

    def test_non_vector_rejected(self):
        with pytest.raises(ShapeError):
            linalg.outer(Matrix.zeros(2, 2), Matrix.column([1, 2]))


class TestKaiming:
    def test_deterministic(self):
        a = linalg.kaiming_init(5, 7, Rng(42))
        b = linalg.kaiming_init(5, 7, Rng(42))
        assert a == b

    def test_bound(self):
        m = linalg.kaiming_init(20, 9, Rng(0))
        b = math.sqrt(6.0 / 9)
        assert all(-b < v < b for v in m.data)

    def test_empirical_variance(self):
        # Var(uniform(-b, b)) = b^2/3 = 2/cols; one million draws
        cols = 1000
        m = linalg.kaiming_init(1000, cols, Rng(7))
        mean = math.fsum(m.data) / len(m.data)
        var = math.fsum((v - mean) ** 2 for v in m.data) / len(m.data)
        assert abs(var - 2.0 / cols) <= 0.05 * (2.0 / cols)


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(99), Rng(99)
        assert [a.uniform(0, 1) for _ in range(10)] == [b.uniform(0, 1) for _ in range(10)]
        assert [a.normal() for _ in range(10)] == [b.normal() for _ in range(10)]

    def test_documented_algorithm(self):
        assert Rng(0).algorithm == "mt19937"


class TestHelpers:
    def test_from_rows_ragged(self):
        with pytest.raises(ShapeError):
            Matrix.from_rows([[1, 2], [3]])

    def test_add_sub_scale_dot(self):
        a = Matrix.from_rows([[1, 2], [3, 4]])
        b = Matrix.from_rows([[10, 20], [30, 40]])
        assert linalg.add(a, b).to_rows() == [[11, 22], [33, 44]]
        assert linalg.sub(b, a).to_rows() == [[9, 18], [27, 36]]
        assert linalg.scale(a, 2.0).to_rows() == [[2, 4], [6, 8]]
        assert linalg.dot(Matrix.column([1, 2]), Matrix.column([3, 4])) == 11.0

    def test_random_orthogonal(self):
        q = linalg.random_orthogonal(12, Rng(5))
        eye = linalg.matmul_t(q, q)
        for i in range(12):
            for j in range(12):
                expected = 1.0 if i == j else 0.0
                assert abs(eye[i, j] - expected) < 1e-9
        assert linalg.random_orthogonal(12, Rng(5)) == q
