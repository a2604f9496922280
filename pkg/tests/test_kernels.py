"""Backend parity: the compiled extension must match the pure-Python kernels
bit for bit."""
import math
import random
from array import array

import pytest

from lorank import _kernels_py
from lorank.backend import BACKEND

compiled = pytest.importorskip("lorank._kernels")


def _rand_buf(rnd, n):
    return array("d", (rnd.uniform(-2, 2) for _ in range(n)))


@pytest.mark.parametrize("m,n,p", [(1, 1, 1), (3, 4, 5), (16, 16, 16), (7, 2, 9)])
def test_matmul_parity(m, n, p):
    rnd = random.Random(100 + m * n * p)
    a, b = _rand_buf(rnd, m * n), _rand_buf(rnd, n * p)
    out_c = array("d", bytes(8 * m * p))
    out_p = array("d", bytes(8 * m * p))
    fc = compiled.matmul(a, b, out_c, m, n, p)
    fp = _kernels_py.matmul(a, b, out_p, m, n, p)
    assert fc == fp == 1
    assert out_c == out_p


@pytest.mark.parametrize("m,n,p", [(3, 4, 1), (8, 2, 3), (16, 16, 2)])
def test_matmul_t_parity(m, n, p):
    rnd = random.Random(200 + m + n + p)
    a, b = _rand_buf(rnd, m * n), _rand_buf(rnd, m * p)
    out_c = array("d", bytes(8 * n * p))
    out_p = array("d", bytes(8 * n * p))
    assert compiled.matmul_t(a, b, out_c, m, n, p) == 1
    assert _kernels_py.matmul_t(a, b, out_p, m, n, p) == 1
    assert out_c == out_p


def test_add_outer_parity():
    rnd = random.Random(3)
    m, n = 6, 5
    u, v = _rand_buf(rnd, m), _rand_buf(rnd, n)
    out_c = _rand_buf(rnd, m * n)
    out_p = array("d", out_c)
    compiled.add_outer(out_c, u, v, 1.7, m, n)
    _kernels_py.add_outer(out_p, u, v, 1.7, m, n)
    assert out_c == out_p


def test_vector_ops_parity():
    rnd = random.Random(4)
    k = 33
    a, b = _rand_buf(rnd, k), _rand_buf(rnd, k)
    for name, args in [
        ("vec_add_scaled", (a, b, -0.37, k)),
        ("vec_scale", (a, 2.5, k)),
        ("vec_tanh", (a, k)),
    ]:
        out_c = array("d", bytes(8 * k))
        out_p = array("d", bytes(8 * k))
        getattr(compiled, name)(out_c, *args)
        getattr(_kernels_py, name)(out_p, *args)
        assert out_c == out_p, name


def test_matmul_flags_nonfinite():
    a = array("d", [1.0, math.inf])
    b = array("d", [1.0, 1.0])
    out = array("d", bytes(8))
    assert compiled.matmul(a, b, out, 1, 2, 1) == 0
    assert _kernels_py.matmul(a, b, out, 1, 2, 1) == 0


def test_backend_selected():
    assert BACKEND in ("compiled", "python")
