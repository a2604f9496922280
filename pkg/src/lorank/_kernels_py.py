"""Pure-Python reference kernels.

Same signatures and, critically, the same floating-point operation order as
the compiled extension in ``_kernels.pyx``, so both backends produce
bit-identical results. All buffers are flat row-major double sequences
(``array('d')`` in practice).
"""
import math


def matmul(a, b, out, m, n, p):
    """out(m,p) = a(m,n) @ b(n,p). Returns 1 if every entry is finite."""
    finite = 1
    for i in range(m):
        ai = i * n
        oi = i * p
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += a[ai + k] * b[k * p + j]
            out[oi + j] = s
            if not math.isfinite(s):
                finite = 0
    return finite


def matmul_t(a, b, out, m, n, p):
    """out(n,p) = a(m,n)^T @ b(m,p). Returns 1 if every entry is finite."""
    finite = 1
    for i in range(n):
        oi = i * p
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += a[k * n + i] * b[k * p + j]
            out[oi + j] = s
            if not math.isfinite(s):
                finite = 0
    return finite


def add_outer(out, u, v, c, m, n):
    """out(m,n) += c * u(m) outer v(n)."""
    for i in range(m):
        cu = c * u[i]
        oi = i * n
        for j in range(n):
            out[oi + j] += cu * v[j]


def vec_add_scaled(out, a, b, c, k):
    """out = a + c*b, elementwise over k entries."""
    for i in range(k):
        out[i] = a[i] + c * b[i]


def vec_scale(out, a, c, k):
    """out = c*a, elementwise over k entries."""
    for i in range(k):
        out[i] = c * a[i]


def vec_tanh(out, a, k):
    """out = tanh(a), elementwise over k entries."""
    for i in range(k):
        out[i] = math.tanh(a[i])
