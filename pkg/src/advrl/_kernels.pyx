# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels (same contract as ``advrl._kernels_py``).

Matrix products go through the BLAS exported by ``scipy.linalg.cython_blas``;
the rest is plain loops. The win over numpy is per-call overhead, which
dominates for the small networks and single-observation batches used while
acting in an environment.

Row-major ``(batch, H)`` buffers are handed to column-major BLAS as their
``H x batch`` transposes, so a layer's column block is addressed by a pointer
offset with leading dimension ``H``.
"""

import numpy as np
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    IDENTITY = 0
    RELU = 1
    TANH = 2


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double *a, int lda, double *b, int ldb,
                       double *c, int ldc) noexcept nogil:
    cdef double alpha = 1.0, beta = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _layout(dims, Py_ssize_t *w_off, Py_ssize_t *b_off, Py_ssize_t *c_off):
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t l
    w_off[0] = 0
    c_off[0] = 0
    for l in range(n_layers):
        w_off[l + 1] = w_off[l] + dims[l + 1] * dims[l]
        c_off[l + 1] = c_off[l] + dims[l + 1]
    b_off[0] = w_off[n_layers]
    for l in range(n_layers):
        b_off[l + 1] = b_off[l] + dims[l + 1]


def forward(double[::1] params, dims, acts, double[:, ::1] X):
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t batch = X.shape[0]
    cdef Py_ssize_t w_off[64]
    cdef Py_ssize_t b_off[64]
    cdef Py_ssize_t c_off[64]
    cdef Py_ssize_t l, r, j, H
    cdef int d_in, d_out, act, ldh
    cdef double z
    cdef double *h_ptr

    if n_layers > 63:
        raise ValueError("too many layers for compiled kernel")
    _layout(dims, w_off, b_off, c_off)
    H = c_off[n_layers]
    pre_arr = np.empty((batch, H))
    post_arr = np.empty((batch, H))
    if batch == 0:
        return pre_arr, post_arr
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] post = post_arr

    for l in range(n_layers):
        d_in = dims[l]
        d_out = dims[l + 1]
        act = acts[l]
        if l == 0:
            h_ptr = &X[0, 0]
            ldh = d_in
        else:
            h_ptr = &post[0, c_off[l - 1]]
            ldh = <int>H
        _gemm(b'T', b'N', d_out, <int>batch, d_in, &params[w_off[l]], d_in,
              h_ptr, ldh, &pre[0, c_off[l]], <int>H)
        for r in range(batch):
            for j in range(d_out):
                z = pre[r, c_off[l] + j] + params[b_off[l] + j]
                pre[r, c_off[l] + j] = z
                if act == RELU:
                    post[r, c_off[l] + j] = z if z > 0.0 else 0.0
                elif act == TANH:
                    post[r, c_off[l] + j] = tanh(z)
                else:
                    post[r, c_off[l] + j] = z
    return pre_arr, post_arr


def backward(double[::1] params, dims, acts, double[:, ::1] X,
             double[:, ::1] pre, double[:, ::1] post, G):
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t batch = X.shape[0]
    cdef Py_ssize_t w_off[64]
    cdef Py_ssize_t b_off[64]
    cdef Py_ssize_t c_off[64]
    cdef Py_ssize_t l, r, j, H
    cdef int d_in, d_out, act, ldh
    cdef double a, s
    cdef double *h_ptr

    if n_layers > 63:
        raise ValueError("too many layers for compiled kernel")
    _layout(dims, w_off, b_off, c_off)
    H = c_off[n_layers]
    grad_arr = np.zeros(params.shape[0])
    delta_arr = np.array(G, dtype=np.float64, order="C", copy=True)
    if batch == 0:
        return grad_arr, np.zeros((0, dims[0]))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] delta = delta_arr
    cdef double[:, ::1] dx

    for l in range(n_layers - 1, -1, -1):
        d_in = dims[l]
        d_out = dims[l + 1]
        act = acts[l]
        if act == RELU:
            for r in range(batch):
                for j in range(d_out):
                    if pre[r, c_off[l] + j] <= 0.0:
                        delta[r, j] = 0.0
        elif act == TANH:
            for r in range(batch):
                for j in range(d_out):
                    a = post[r, c_off[l] + j]
                    delta[r, j] = delta[r, j] * (1.0 - a * a)
        for j in range(d_out):
            s = 0.0
            for r in range(batch):
                s += delta[r, j]
            grad[b_off[l] + j] = s
        if l == 0:
            h_ptr = &X[0, 0]
            ldh = d_in
        else:
            h_ptr = &post[0, c_off[l - 1]]
            ldh = <int>H
        _gemm(b'N', b'T', d_in, d_out, <int>batch, h_ptr, ldh,
              &delta[0, 0], d_out, &grad[w_off[l]], d_in)
        dx_arr = np.empty((batch, d_in))
        dx = dx_arr
        _gemm(b'N', b'N', d_in, <int>batch, d_out, &params[w_off[l]], d_in,
              &delta[0, 0], d_out, &dx[0, 0], d_in)
        delta_arr = dx_arr
        delta = dx
    return grad_arr, delta_arr
