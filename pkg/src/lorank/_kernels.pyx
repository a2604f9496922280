# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels.

Mirrors ``_kernels_py`` exactly, including summation order, so results are
bit-identical to the pure-Python fallback (the build disables FP contraction
for the same reason).
"""
from libc.math cimport isfinite, tanh


def matmul(double[::1] a, double[::1] b, double[::1] out, int m, int n, int p):
    """out(m,p) = a(m,n) @ b(n,p). Returns 1 if every entry is finite."""
    cdef int i, j, k, finite = 1
    cdef double s
    for i in range(m):
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += a[i * n + k] * b[k * p + j]
            out[i * p + j] = s
            if not isfinite(s):
                finite = 0
    return finite


def matmul_t(double[::1] a, double[::1] b, double[::1] out, int m, int n, int p):
    """out(n,p) = a(m,n)^T @ b(m,p). Returns 1 if every entry is finite."""
    cdef int i, j, k, finite = 1
    cdef double s
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += a[k * n + i] * b[k * p + j]
            out[i * p + j] = s
            if not isfinite(s):
                finite = 0
    return finite


def add_outer(double[::1] out, double[::1] u, double[::1] v, double c, int m, int n):
    """out(m,n) += c * u(m) outer v(n)."""
    cdef int i, j
    cdef double cu
    for i in range(m):
        cu = c * u[i]
        for j in range(n):
            out[i * n + j] += cu * v[j]


def vec_add_scaled(double[::1] out, double[::1] a, double[::1] b, double c, int k):
    """out = a + c*b, elementwise over k entries."""
    cdef int i
    for i in range(k):
        out[i] = a[i] + c * b[i]


def vec_scale(double[::1] out, double[::1] a, double c, int k):
    """out = c*a, elementwise over k entries."""
    cdef int i
    for i in range(k):
        out[i] = c * a[i]


def vec_tanh(double[::1] out, double[::1] a, int k):
    """out = tanh(a), elementwise over k entries."""
    cdef int i
    for i in range(k):
        out[i] = tanh(a[i])
