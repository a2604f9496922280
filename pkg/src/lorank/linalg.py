"""Dense double-precision matrices and deterministic random initialization.

Matrices are small (a few hundred rows at most), stored row-major in a flat
``array('d')`` with no views or strides. The arithmetic that dominates
runtime (products, outer updates) is dispatched to the kernel backend; see
``lorank.backend``.
"""
from __future__ import annotations

import math
import random
from array import array
from typing import Sequence

from lorank.backend import kernels
from lorank.errors import NumericError, ShapeError

__all__ = [
    "Matrix",
    "Rng",
    "matmul",
    "matmul_t",
    "outer",
    "kaiming_init",
    "kaiming_bound",
    "add",
    "sub",
    "scale",
    "dot",
    "random_orthogonal",
]


class Rng:
    """Deterministic random stream.

    Wraps CPython's ``random.Random`` (MT19937). CPython guarantees that
    ``random()`` produces the same sequence for the same seed across
    platforms and versions, which is what makes every artifact in this
    package reproducible. An Rng is single-owner: one consumer draws from it
    at a time.
    """

    algorithm = "mt19937"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._random = random.Random(self.seed)

    def uniform(self, lo: float, hi: float) -> float:
        return self._random.uniform(lo, hi)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        return self._random.gauss(mu, sigma)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


class Matrix:
    """Dense (rows x cols) matrix of doubles, row-major."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: array | None = None):
        if rows < 1 or cols < 1:
            raise ShapeError(f"matrix dimensions must be positive, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        if data is None:
            self.data = array("d", bytes(8 * rows * cols))
        else:
            if len(data) != rows * cols:
                raise ShapeError(
                    f"data length {len(data)} does not match shape {rows}x{cols}"
                )
            self.data = data

    @classmethod
    def zeros(cls, rows: int, cols: int) -> Matrix:
        return cls(rows, cols)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> Matrix:
        if not rows or not rows[0]:
            raise ShapeError("from_rows needs a non-empty list of non-empty rows")
        n = len(rows[0])
        flat = array("d")
        for r in rows:
            if len(r) != n:
                raise ShapeError("from_rows got ragged rows")
            flat.extend(float(v) for v in r)
        return cls(len(rows), n, flat)

    @classmethod
    def column(cls, values: Sequence[float]) -> Matrix:
        return cls(len(values), 1, array("d", (float(v) for v in values)))

    @classmethod
    def identity(cls, n: int) -> Matrix:
        m = cls(n, n)
        for i in range(n):
            m.data[i * n + i] = 1.0
        return m

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def is_column(self) -> bool:
        return self.cols == 1

    def __getitem__(self, ij: tuple[int, int]) -> float:
        i, j = ij
        return self.data[i * self.cols + j]

    def __setitem__(self, ij: tuple[int, int], value: float) -> None:
        i, j = ij
        self.data[i * self.cols + j] = value

    def row(self, i: int) -> list[float]:
        return list(self.data[i * self.cols : (i + 1) * self.cols])

    def to_rows(self) -> list[list[float]]:
        return [self.row(i) for i in range(self.rows)]

    def copy(self) -> Matrix:
        return Matrix(self.rows, self.cols, array("d", self.data))

    def transpose(self) -> Matrix:
        out = Matrix(self.cols, self.rows)
        for i in range(self.rows):
            base = i * self.cols
            for j in range(self.cols):
                out.data[j * self.rows + i] = self.data[base + j]
        return out

    def frobenius_norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.data))

    def all_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.data == other.data
        )

    __hash__ = None  # mutable

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Matrix(a.rows, b.cols)
    ok = kernels.matmul(a.data, b.data, out.data, a.rows, a.cols, b.cols)
    if not ok:
        raise NumericError(f"matmul produced non-finite entries ({a.shape} @ {b.shape})")
    return out


def matmul_t(a: Matrix, b: Matrix) -> Matrix:
    """Transposed product a^T @ b, without materializing a^T."""
    if a.rows != b.rows:
        raise ShapeError(f"matmul_t shape mismatch: {a.shape}^T @ {b.shape}")
    out = Matrix(a.cols, b.cols)
    ok = kernels.matmul_t(a.data, b.data, out.data, a.rows, a.cols, b.cols)
    if not ok:
        raise NumericError(
            f"matmul_t produced non-finite entries ({a.shape}^T @ {b.shape})"
        )
    return out


def outer(u: Matrix, v: Matrix) -> Matrix:
    """Outer product of two column vectors: result[i][j] = u[i]*v[j]."""
    if not u.is_column or not v.is_column:
        raise ShapeError(f"outer needs column vectors, got {u.shape} and {v.shape}")
    out = Matrix(u.rows, v.rows)
    kernels.add_outer(out.data, u.data, v.data, 1.0, u.rows, v.rows)
    if not out.all_finite():
        raise NumericError(f"outer produced non-finite entries ({u.shape}, {v.shape})")
    return out


def kaiming_bound(fan_in: int) -> float:
    return math.sqrt(6.0 / fan_in)


def kaiming_init(rows: int, cols: int, rng: Rng) -> Matrix:
    """Kaiming-uniform init: entries ~ uniform(-b, b), b = sqrt(6/fan_in).

    Fan-in is the column count. Entries are drawn in row-major order, so the
    output is a pure function of (seed state, shape).
    """
    b = kaiming_bound(cols)
    out = Matrix(rows, cols)
    data = out.data
    for i in range(rows * cols):
        data[i] = rng.uniform(-b, b)
    return out


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = Matrix(a.rows, a.cols)
    kernels.vec_add_scaled(out.data, a.data, b.data, 1.0, len(a.data))
    return out


def sub(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}")
    out = Matrix(a.rows, a.cols)
    kernels.vec_add_scaled(out.data, a.data, b.data, -1.0, len(a.data))
    return out


def scale(a: Matrix, c: float) -> Matrix:
    if not math.isfinite(c):
        raise NumericError(f"scale factor is not finite: {c!r}")
    out = Matrix(a.rows, a.cols)
    kernels.vec_scale(out.data, a.data, c, len(a.data))
    return out


def dot(u: Matrix, v: Matrix) -> float:
    if not u.is_column or not v.is_column or u.rows != v.rows:
        raise ShapeError(f"dot needs equal-length column vectors, got {u.shape}, {v.shape}")
    return math.fsum(a * b for a, b in zip(u.data, v.data))


def random_orthogonal(n: int, rng: Rng) -> Matrix:
    """Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.

    Used by the synthetic-task generator, where isometric frozen maps keep
    gradient transport free of depth trends.
    """
    g = Matrix(n, n)
    for i in range(n * n):
        g.data[i] = rng.normal()
    cols: list[list[float]] = [[g.data[i * n + j] for i in range(n)] for j in range(n)]
    out = Matrix(n, n)
    basis: list[list[float]] = []
    for j, v in enumerate(cols):
        # two orthogonalization passes for numerical hygiene
        for _ in range(2):
            for q in basis:
                proj = math.fsum(qi * vi for qi, vi in zip(q, v))
                for i in range(n):
                    v[i] -= proj * q[i]
        norm = math.sqrt(math.fsum(x * x for x in v))
        if norm < 1e-12:
            raise NumericError("degenerate Gaussian draw in random_orthogonal")
        v = [x / norm for x in v]
        basis.append(v)
        for i in range(n):
            out.data[i * n + j] = v[i]
    return out
