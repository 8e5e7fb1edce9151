# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled affine-recursion kernels (see ``_fallback`` for the reference)."""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, dger

cnp.import_array()


cdef void _step(const double[:, ::1] phi, const double[::1] gamma, double uk,
                const double[::1] x, double[::1] y) noexcept nogil:
    cdef Py_ssize_t n = phi.shape[0], i, j
    cdef double s
    for i in range(n):
        s = gamma[i] * uk
        for j in range(n):
            s += phi[i, j] * x[j]
        y[i] = s


def propagate(phi, gamma, x0, u):
    cdef const double[:, ::1] P = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const double[::1] G = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef const double[::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t N = U.shape[0], n = P.shape[0], k
    out = np.empty((N + 1, n))
    out[0] = x0
    cdef double[:, ::1] X = out
    with nogil:
        for k in range(N):
            _step(P, G, U[k], X[k], X[k + 1])
    return out


def propagate_batch(phis, gammas, x0s, u):
    cdef const double[:, :, ::1] P = np.ascontiguousarray(phis, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(gammas, dtype=np.float64)
    cdef const double[::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t B = P.shape[0], n = P.shape[1], N = U.shape[0], b, k
    out = np.empty((B, N + 1, n))
    out[:, 0] = x0s
    cdef double[:, :, ::1] X = out
    with nogil:
        for b in range(B):
            for k in range(N):
                _step(P[b], G[b], U[k], X[b, k], X[b, k + 1])
    return out


def propagate_grid(phis, gammas, x0s, U):
    # one dgemm per (system, step) advances all B input rows together
    cdef const double[:, :, ::1] P = np.ascontiguousarray(phis, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(gammas, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(np.atleast_2d(U), dtype=np.float64)
    cdef int B = W.shape[0], N = W.shape[1], NP = P.shape[0], n = P.shape[1]
    out = np.empty((B, NP, N + 1, n))
    out[:, :, 0] = x0s
    cdef double[:, :, :, ::1] X = out
    cdef int ld = NP * (N + 1) * n, one = 1
    cdef double alpha = 1.0, beta = 0.0
    cdef char ta = b'T', tb = b'N'
    cdef Py_ssize_t p, k
    if B == 0 or N == 0:
        return out
    with nogil:
        for p in range(NP):
            for k in range(N):
                dgemm(&ta, &tb, &n, &B, &n, &alpha, <double*>&P[p, 0, 0], &n,
                      &X[0, p, k, 0], &ld, &beta, &X[0, p, k + 1, 0], &ld)
                dger(&n, &B, &alpha, <double*>&G[p, 0], &one, <double*>&W[0, k], &N,
                     &X[0, p, k + 1, 0], &ld)
    return out


def markov(phi, gamma, Py_ssize_t count):
    cdef const double[:, ::1] P = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], l
    out = np.empty((count, n))
    if count:
        out[0] = gamma
    cdef double[:, ::1] H = out
    cdef double[::1] zero = np.zeros(n)
    with nogil:
        for l in range(1, count):
            _step(P, zero, 0.0, H[l - 1], H[l])
    return out


def adjoint_batch(phis, r):
    cdef const double[:, :, ::1] P = np.ascontiguousarray(phis, dtype=np.float64)
    cdef const double[:, :, ::1] R = np.ascontiguousarray(r, dtype=np.float64)
    cdef Py_ssize_t B = R.shape[0], N = R.shape[1], n = R.shape[2], b, m, i, j
    cdef double s
    out = np.zeros((B, N, n))
    cdef double[:, :, ::1] L = out
    with nogil:
        for b in range(B):
            for m in range(N - 2, -1, -1):
                for i in range(n):
                    s = R[b, m + 1, i]
                    for j in range(n):
                        s += P[b, j, i] * L[b, m + 1, j]
                    L[b, m, i] = s
    return out
