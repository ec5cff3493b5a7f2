# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: monotonic alignment recurrence (forward/adjoint) and
read/write automaton sampling. Semantics mirror ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def alignment_forward(const double[:, :, ::1] p, const double[:, ::1] mask):
    cdef Py_ssize_t N = p.shape[0], T = p.shape[1], S = p.shape[2]
    cdef Py_ssize_t n, i, j
    alpha_arr = np.zeros((N, T, S), dtype=np.float64)
    r_arr = np.zeros((N, T, S), dtype=np.float64)
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double prev, acc
    for n in range(N):
        for i in range(T):
            for j in range(S):
                if i == 0:
                    prev = 1.0 if j == 0 else 0.0
                else:
                    prev = alpha[n, i - 1, j]
                if j == 0:
                    acc = prev
                else:
                    acc = (1.0 - p[n, i, j - 1]) * r[n, i, j - 1] + prev
                r[n, i, j] = acc
                alpha[n, i, j] = p[n, i, j] * acc * mask[n, j]
    return alpha_arr, r_arr


def alignment_backward(const double[:, :, ::1] p, const double[:, ::1] mask,
                       const double[:, :, ::1] r, const double[:, :, ::1] grad_alpha):
    cdef Py_ssize_t N = p.shape[0], T = p.shape[1], S = p.shape[2]
    cdef Py_ssize_t n, i, j
    gp_arr = np.zeros((N, T, S), dtype=np.float64)
    cdef double[:, :, ::1] gp = gp_arr
    carry_arr = np.zeros(S, dtype=np.float64)
    cdef double[::1] carry = carry_arr
    cdef double G, gr, gr_next, gm
    for n in range(N):
        for j in range(S):
            carry[j] = 0.0
        for i in range(T - 1, -1, -1):
            gr_next = 0.0
            for j in range(S - 1, -1, -1):
                G = (grad_alpha[n, i, j] + carry[j]) * mask[n, j]
                gr = G * p[n, i, j] + gr_next * (1.0 - p[n, i, j])
                gp[n, i, j] = G * r[n, i, j] - gr_next * r[n, i, j]
                carry[j] = gr
                gr_next = gr
    return gp_arr


def sample_paths(const double[:, ::1] p, const double[:, :, ::1] u):
    cdef Py_ssize_t T = p.shape[0], S = p.shape[1], n_samples = u.shape[0]
    cdef Py_ssize_t k, i, j, start
    t_arr = np.zeros((n_samples, T), dtype=np.int64)
    f_arr = np.zeros((n_samples, T), dtype=np.uint8)
    cdef cnp.int64_t[:, ::1] t = t_arr
    cdef cnp.uint8_t[:, ::1] forced = f_arr
    for k in range(n_samples):
        start = 0
        for i in range(T):
            j = start
            while j < S and u[k, i, j] >= p[i, j]:
                j += 1
            if j == S:
                t[k, i] = S - 1
                forced[k, i] = 1
                start = S - 1
            else:
                t[k, i] = j
                start = j
    return t_arr, f_arr
