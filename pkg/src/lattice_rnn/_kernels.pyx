# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled dense kernels with a fixed accumulation order.

Results are bit-identical to :mod:`lattice_rnn._fallback`; the pure-numpy
module is the reference and this one only exists for speed.
"""
import numpy as np

cdef extern from "_fixed_matmul.h":
    void mm_fixed(const double *a, Py_ssize_t a_rs, Py_ssize_t a_cs,
                  const double *b, Py_ssize_t ldb,
                  double *c, Py_ssize_t ldc,
                  Py_ssize_t p, Py_ssize_t q, Py_ssize_t r) nogil


cdef inline void _mm(const double[:, :] a, const double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    cdef Py_ssize_t p = a.shape[0], q = a.shape[1], r = b.shape[1]
    cdef Py_ssize_t i, j
    if p == 0 or r == 0:
        return
    if q == 0:
        for i in range(p):
            for j in range(r):
                c[i, j] = 0.0
        return
    mm_fixed(&a[0, 0], a.strides[0] // sizeof(double), a.strides[1] // sizeof(double),
             &b[0, 0], b.strides[0] // sizeof(double),
             &c[0, 0], c.strides[0] // sizeof(double), p, q, r)


def matmul(a, b):
    cdef double[:, ::1] bc = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[1]))
    _mm(a, bc, out)
    return out


def matmul_acc(a, b, double[:, ::1] out):
    cdef double[:, ::1] bc = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] tmp = np.empty((a.shape[0], b.shape[1]))
    cdef Py_ssize_t i, j
    _mm(a, bc, tmp)
    with nogil:
        for i in range(tmp.shape[0]):
            for j in range(tmp.shape[1]):
                out[i, j] = out[i, j] + tmp[i, j]


def affine_pair(w, a, u, b, const double[:, :] bias):
    cdef double[:, ::1] ac = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bc = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((w.shape[0], ac.shape[1]))
    cdef double[:, ::1] o = out
    cdef double[:, ::1] tmp = np.empty((u.shape[0], bc.shape[1]))
    cdef Py_ssize_t i, j
    _mm(w, ac, o)
    _mm(u, bc, tmp)
    with nogil:
        for i in range(o.shape[0]):
            for j in range(o.shape[1]):
                o[i, j] = (o[i, j] + tmp[i, j]) + bias[i, 0]
    return out
