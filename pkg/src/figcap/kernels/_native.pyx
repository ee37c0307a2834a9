# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels mirroring figcap.kernels.numpy_backend.

Accepts arbitrarily strided float64 arrays so matmul can be fed
transposed views without copies.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, tanh as c_tanh

cnp.import_array()


def matmul(double[:, :] a, double[:, :] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, p, j
    cdef double aip
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                o[i, j] += aip * b[p, j]
    return out


def sigmoid(object x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double t
    for i in range(n):
        t = exp(-fabs(flat[i]))
        if flat[i] >= 0:
            out[i] = 1.0 / (1.0 + t)
        else:
            out[i] = t / (1.0 + t)
    return out.reshape(np.shape(x))


def tanh(object x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = c_tanh(flat[i])
    return out.reshape(np.shape(x))


def relu(object x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = flat[i] if flat[i] > 0.0 else 0.0
    return out.reshape(np.shape(x))


def softmax_rows(double[:, :] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            o[i, j] = exp(x[i, j] - m)
            s += o[i, j]
        for j in range(d):
            o[i, j] /= s
    return out


def layer_norm_rows(double[:, :] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] xhat = np.empty((n, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] inv_std = np.empty((n, 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] xh = xhat
    cdef double[:, ::1] inv = inv_std
    cdef Py_ssize_t i, j
    cdef double mu, var, diff, s
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        s = 1.0 / sqrt(var + eps)
        inv[i, 0] = s
        for j in range(d):
            xh[i, j] = (x[i, j] - mu) * s
            o[i, j] = xh[i, j] * gain[j] + bias[j]
    return out, xhat, inv_std
