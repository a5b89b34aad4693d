# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: embedding-gradient scatter-add and the AdamW step.

Must stay bit-compatible with ``cfdetox.kernels.pure`` (same per-element
operation order, built with FP contraction off).
"""

from libc.math cimport sqrt


def scatter_add_rows(double[:, ::1] out, long long[::1] ids, double[:, ::1] rows):
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t k, j
    cdef long long row
    for k in range(n):
        row = ids[k]
        for j in range(d):
            out[row, j] = out[row, j] + rows[k, j]


def adamw_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bias_c1, double bias_c2):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double decay_mul = 1.0 - lr * weight_decay
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    cdef double gi, mhat, denom
    for i in range(n):
        if weight_decay != 0.0:
            p[i] = p[i] * decay_mul
        gi = g[i]
        m[i] = m[i] * beta1 + c1 * gi
        v[i] = v[i] * beta2 + c2 * (gi * gi)
        mhat = m[i] / bias_c1
        denom = sqrt(v[i] / bias_c2) + eps
        p[i] = p[i] - lr * (mhat / denom)
