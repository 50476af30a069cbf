# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused single-pass variants of the numpy backend.

Same contracts as numpy_backend (float32 storage, float64 accumulation);
fused loops avoid the large float64 temporaries the numpy fallback allocates.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

NAME = "compiled"


def softmax_fwd(cnp.ndarray[cnp.float32_t, ndim=2] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] y = np.empty((rows, n), dtype=np.float32)
    cdef Py_ssize_t r, j
    cdef double m, s, e
    for r in range(rows):
        m = x[r, 0]
        for j in range(1, n):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(n):
            s += exp(<double> x[r, j] - m)
        for j in range(n):
            y[r, j] = <float> (exp(<double> x[r, j] - m) / s)
    return y


def softmax_bwd(cnp.ndarray[cnp.float32_t, ndim=2] y,
                cnp.ndarray[cnp.float32_t, ndim=2] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] gx = np.empty((rows, n), dtype=np.float32)
    cdef Py_ssize_t r, j
    cdef double dot
    for r in range(rows):
        dot = 0.0
        for j in range(n):
            dot += <double> gy[r, j] * <double> y[r, j]
        for j in range(n):
            gx[r, j] = <float> (<double> y[r, j] * (<double> gy[r, j] - dot))
    return gx


def layernorm_fwd(cnp.ndarray[cnp.float32_t, ndim=2] x,
                  cnp.ndarray[cnp.float32_t, ndim=1] gamma,
                  cnp.ndarray[cnp.float32_t, ndim=1] beta,
                  double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] y = np.empty((rows, n), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=1] mean = np.empty(rows, dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=1] rstd = np.empty(rows, dtype=np.float32)
    cdef Py_ssize_t r, j
    cdef double mu, var, rs, d
    for r in range(rows):
        mu = 0.0
        for j in range(n):
            mu += <double> x[r, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = <double> x[r, j] - mu
            var += d * d
        var /= n
        rs = 1.0 / sqrt(var + eps)
        mean[r] = <float> mu
        rstd[r] = <float> rs
        for j in range(n):
            y[r, j] = <float> (((<double> x[r, j] - mu) * rs) * <double> gamma[j]
                               + <double> beta[j])
    return y, mean, rstd


def layernorm_bwd(cnp.ndarray[cnp.float32_t, ndim=2] x,
                  cnp.ndarray[cnp.float32_t, ndim=1] gamma,
                  cnp.ndarray[cnp.float32_t, ndim=1] mean,
                  cnp.ndarray[cnp.float32_t, ndim=1] rstd,
                  cnp.ndarray[cnp.float32_t, ndim=2] gy):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] gx = np.empty((rows, n), dtype=np.float32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dgamma = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dbeta = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t r, j
    cdef double mu, rs, m1, m2, xh, gxh
    for r in range(rows):
        mu = <double> mean[r]
        rs = <double> rstd[r]
        m1 = 0.0
        m2 = 0.0
        for j in range(n):
            xh = (<double> x[r, j] - mu) * rs
            gxh = <double> gy[r, j] * <double> gamma[j]
            m1 += gxh
            m2 += gxh * xh
            dgamma[j] += <double> gy[r, j] * xh
            dbeta[j] += <double> gy[r, j]
        m1 /= n
        m2 /= n
        for j in range(n):
            xh = (<double> x[r, j] - mu) * rs
            gxh = <double> gy[r, j] * <double> gamma[j]
            gx[r, j] = <float> (rs * (gxh - m1 - xh * m2))
    return gx, dgamma.astype(np.float32), dbeta.astype(np.float32)


def scatter_add_rows(cnp.ndarray[cnp.float32_t, ndim=2] out,
                     cnp.ndarray[cnp.int64_t, ndim=1] ids,
                     cnp.ndarray[cnp.float32_t, ndim=2] g):
    cdef Py_ssize_t k, j, row
    cdef Py_ssize_t nk = ids.shape[0], d = out.shape[1]
    for k in range(nk):
        row = ids[k]
        for j in range(d):
            out[row, j] += g[k, j]


def adamw_update(cnp.ndarray[cnp.float32_t, ndim=1] w,
                 cnp.ndarray[cnp.float32_t, ndim=1] g,
                 cnp.ndarray[cnp.float32_t, ndim=1] m,
                 cnp.ndarray[cnp.float32_t, ndim=1] v,
                 long t, double lr, double beta1, double beta2,
                 double eps, double wd):
    cdef Py_ssize_t i, n = w.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double g64, m64, v64, mhat, vhat, w64
    for i in range(n):
        g64 = <double> g[i]
        m64 = beta1 * <double> m[i] + (1.0 - beta1) * g64
        v64 = beta2 * <double> v[i] + (1.0 - beta2) * g64 * g64
        m[i] = <float> m64
        v[i] = <float> v64
        mhat = <double> m[i] / bc1
        vhat = <double> v[i] / bc2
        w64 = <double> w[i]
        w[i] = <float> (w64 - lr * mhat / (sqrt(vhat) + eps) - lr * wd * w64)
