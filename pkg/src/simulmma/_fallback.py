"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Loops run over target rows and source columns; the leading batch axis is
vectorized. Operation order matches the compiled code so results agree
bit-for-bit.
"""

import numpy as np


def alignment_forward(p: np.ndarray, mask: np.ndarray):
    N, T, S = p.shape
    alpha = np.zeros((N, T, S))
    r = np.zeros((N, T, S))
    prev = np.zeros((N, S))
    prev[:, 0] = 1.0
    for i in range(T):
        acc = prev[:, 0].copy()
        r[:, i, 0] = acc
        alpha[:, i, 0] = p[:, i, 0] * acc * mask[:, 0]
        for j in range(1, S):
            acc = (1.0 - p[:, i, j - 1]) * acc + prev[:, j]
            r[:, i, j] = acc
            alpha[:, i, j] = p[:, i, j] * acc * mask[:, j]
        prev = alpha[:, i]
    return alpha, r


def alignment_backward(p: np.ndarray, mask: np.ndarray, r: np.ndarray, grad_alpha: np.ndarray):
    N, T, S = p.shape
    gp = np.zeros((N, T, S))
    carry = np.zeros((N, S))
    for i in range(T - 1, -1, -1):
        gr_next = np.zeros(N)
        for j in range(S - 1, -1, -1):
            G = (grad_alpha[:, i, j] + carry[:, j]) * mask[:, j]
            gr = G * p[:, i, j] + gr_next * (1.0 - p[:, i, j])
            gp[:, i, j] = G * r[:, i, j] - gr_next * r[:, i, j]
            carry[:, j] = gr
            gr_next = gr
    return gp


def sample_paths(p: np.ndarray, u: np.ndarray):
    T, S = p.shape
    n = u.shape[0]
    t = np.zeros((n, T), dtype=np.int64)
    forced = np.zeros((n, T), dtype=np.uint8)
    start = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for i in range(T):
        j = start.copy()
        searching = np.ones(n, dtype=bool)
        while searching.any():
            idx = rows[searching]
            jj = j[idx]
            write = u[idx, i, jj] < p[i, jj]
            done = write | (jj + 1 >= S)
            # a sample that reads past the last column is forced
            ran_off = ~write & (jj + 1 >= S)
            t[idx[write], i] = jj[write]
            t[idx[ran_off], i] = S - 1
            forced[idx[ran_off], i] = 1
            j[idx[~done]] += 1
            searching[idx[done]] = False
        start = t[:, i].copy()
    return t, forced
