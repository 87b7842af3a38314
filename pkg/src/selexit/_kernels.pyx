# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Per-sample loops with early termination: the gated exit walk and the
Monte Carlo pipeline walk."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    EXIT = 0
    DEFER = 1


def gate_walk(const double[:, ::1] conf, const double[:, ::1] hard, double alpha, double beta):
    cdef Py_ssize_t m = conf.shape[0], n = conf.shape[1], k, i
    kind_arr = np.empty(m, dtype=np.int8)
    layer_arr = np.empty(m, dtype=np.int32)
    cdef signed char[::1] kind = kind_arr
    cdef int[::1] layer = layer_arr
    for k in range(m):
        for i in range(n):
            if i == n - 1:
                kind[k] = EXIT if conf[k, i] >= alpha else DEFER
                layer[k] = i + 1
                break
            if hard[k, i] >= beta:
                kind[k] = DEFER
                layer[k] = i + 1
                break
            if conf[k, i] >= alpha:
                kind[k] = EXIT
                layer[k] = i + 1
                break
    return kind_arr, layer_arr


def simulate_walk(const double[:, :, ::1] u, const double[::1] q, const double[::1] qd,
                  const double[::1] a, const double[::1] b):
    cdef Py_ssize_t trials = u.shape[0], n = u.shape[1], k, t
    counts_arr = np.zeros((5, n), dtype=np.int64)
    cdef long long[:, ::1] c = counts_arr
    cdef bint wrong, passes, clear
    for k in range(trials):
        # conditional-on-reach view: every layer judged as if the sample arrived
        for t in range(n):
            wrong = u[k, t, 0] < q[t]
            passes = wrong == (u[k, t, 1] < qd[t])
            if passes and u[k, t, 2] < a[t] and u[k, t, 3] < b[t]:
                c[3, t] += 1
                if wrong:
                    c[4, t] += 1
        # sequential pipeline walk
        for t in range(n):
            wrong = u[k, t, 0] < q[t]
            passes = wrong == (u[k, t, 1] < qd[t])
            if not passes or u[k, t, 2] >= a[t]:
                c[2, t] += 1
                break
            clear = u[k, t, 3] < b[t]
            if clear:
                c[0, t] += 1
                if wrong:
                    c[1, t] += 1
                break
            if t == n - 1:
                c[2, t] += 1
    return counts_arr
