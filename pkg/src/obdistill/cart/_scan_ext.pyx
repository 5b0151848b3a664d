# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled split scan; same contract as ``_scan_py.cut_decreases``."""
import numpy as np
from libc.math cimport INFINITY


def cut_decreases(const double[::1] values, const double[:, ::1] Z,
                  const double[::1] w, double total):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t C = Z.shape[1]
    cdef Py_ssize_t k, c
    if n < 2:
        return np.empty(0)
    out = np.empty(n - 1)
    cdef double[::1] dec = out
    left_arr = np.zeros(C)
    node_arr = np.zeros(C)
    cdef double[::1] left = left_arr
    cdef double[::1] node = node_arr
    cdef double W = 0.0, wl = 0.0, wr, sl, sr, sn = 0.0, r

    for k in range(n):
        W += w[k]
        for c in range(C):
            node[c] += Z[k, c]
    for c in range(C):
        sn += node[c] * node[c]
    sn /= W

    for k in range(n - 1):
        wl += w[k]
        for c in range(C):
            left[c] += Z[k, c]
        wr = W - wl
        if not (values[k + 1] > values[k]) or wl <= 0.0 or wr <= 0.0:
            dec[k] = -INFINITY
            continue
        sl = 0.0
        sr = 0.0
        for c in range(C):
            sl += left[c] * left[c]
            r = node[c] - left[c]
            sr += r * r
        dec[k] = (sl / wl + sr / wr - sn) / total
    return out
