# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cyclic block coordinate descent kernels (see ``_cbcgd_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef double _objective(double[:, ::1] theta, double[:, :, ::1] M, double[:, ::1] h,
                       const long[::1] indptr, const long[::1] indices,
                       const double[::1] weights, const double[::1] degrees,
                       double lam, double gamma) noexcept nogil:
    cdef Py_ssize_t N = theta.shape[0], L = theta.shape[1]
    cdef Py_ssize_t v, i, j, k, u
    cdef double quad = 0.0, pen = 0.0, s, sq, dot
    for v in range(N):
        sq = 0.0
        for i in range(L):
            s = 0.0
            for j in range(L):
                s = s + M[v, i, j] * theta[v, j]
            quad = quad + theta[v, i] * (0.5 * s - h[v, i])
            sq = sq + theta[v, i] * theta[v, i]
        pen = pen + (degrees[v] + gamma) * sq
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            dot = 0.0
            for i in range(L):
                dot = dot + theta[u, i] * theta[v, i]
            pen = pen - weights[k] * dot
    return quad + 0.5 * lam * pen


cdef void _cycle(double[:, ::1] theta, double[:, :, ::1] M, double[:, ::1] h,
                 const long[::1] indptr, const long[::1] indices,
                 const double[::1] weights, const double[::1] degrees,
                 const double[::1] rates, double lam, double gamma,
                 double[::1] grad) noexcept nogil:
    cdef Py_ssize_t N = theta.shape[0], L = theta.shape[1]
    cdef Py_ssize_t v, i, j, k, u
    cdef double s, w, lg = lam * gamma, denom, eta, ld
    cdef const double* row
    cdef double* tv
    for v in range(N):
        ld = lam * degrees[v]
        tv = &theta[v, 0]
        for i in range(L):
            row = &M[v, i, 0]
            s = 0.0
            for j in range(L):
                s = s + row[j] * tv[j]
            grad[i] = s - h[v, i] + ld * tv[i]
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            w = lam * weights[k]
            for i in range(L):
                grad[i] = grad[i] - w * theta[u, i]
        eta = rates[v]
        denom = eta + lg
        for i in range(L):
            theta[v, i] = (eta * theta[v, i] - grad[i]) / denom


def objective(double[:, ::1] theta, double[:, :, ::1] M, double[:, ::1] h,
              const long[::1] indptr, const long[::1] indices,
              const double[::1] weights, const double[::1] degrees,
              double lam, double gamma):
    return _objective(theta, M, h, indptr, indices, weights, degrees, lam, gamma)


def cycle(double[:, ::1] theta, double[:, :, ::1] M, double[:, ::1] h,
          const long[::1] indptr, const long[::1] indices,
          const double[::1] weights, const double[::1] degrees,
          const double[::1] rates, double lam, double gamma):
    cdef double[::1] grad = np.empty(theta.shape[1])
    with nogil:
        _cycle(theta, M, h, indptr, indices, weights, degrees, rates, lam, gamma, grad)


def run(double[:, ::1] theta, double[:, :, ::1] M, double[:, ::1] h,
        const long[::1] indptr, const long[::1] indices,
        const double[::1] weights, const double[::1] degrees,
        const double[::1] rates, double lam, double gamma,
        double tol, long max_cycles, bint track):
    cdef Py_ssize_t N = theta.shape[0], L = theta.shape[1]
    cdef double[::1] grad = np.empty(L)
    cdef double[:, ::1] prev = np.empty((N, L))
    cdef cnp.ndarray trace_arr = np.empty(max_cycles if track else 0)
    cdef double[::1] trace = trace_arr
    cdef long it, cycles = max_cycles
    cdef Py_ssize_t v, i
    cdef double old, diff, new, d
    cdef bint converged = False
    with nogil:
        for it in range(1, max_cycles + 1):
            prev[:, :] = theta
            _cycle(theta, M, h, indptr, indices, weights, degrees, rates, lam, gamma, grad)
            if track:
                trace[it - 1] = _objective(theta, M, h, indptr, indices, weights,
                                           degrees, lam, gamma)
            old = 0.0
            diff = 0.0
            new = 0.0
            for v in range(N):
                for i in range(L):
                    old = old + prev[v, i] * prev[v, i]
                    new = new + theta[v, i] * theta[v, i]
                    d = theta[v, i] - prev[v, i]
                    diff = diff + d * d
            if old == 0.0:
                if new == 0.0:
                    converged = True
            elif sqrt(diff) <= tol * sqrt(old):
                converged = True
            if converged:
                cycles = it
                break
    return cycles, bool(converged), trace_arr[:cycles] if track else trace_arr
