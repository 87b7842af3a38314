"""Numpy fallback for the compiled kernels; same inputs, same outputs."""

import numpy as np

EXIT, DEFER = 0, 1


def _first_true(mask):
    """Index of the first True per row; rows are guaranteed to contain one."""
    return mask.argmax(axis=1)


def gate_walk(conf, hard, alpha, beta):
    conf = np.asarray(conf, dtype=np.float64)
    hard = np.asarray(hard, dtype=np.float64)
    m, n = conf.shape
    defer = hard >= beta
    exit_ = ~defer & (conf >= alpha)
    defer[:, -1] = conf[:, -1] < alpha
    exit_[:, -1] = ~defer[:, -1]
    stop = _first_true(defer | exit_)
    rows = np.arange(m)
    kind = np.where(exit_[rows, stop], EXIT, DEFER).astype(np.int8)
    return kind, (stop + 1).astype(np.int32)


def simulate_walk(u, q, qd, a, b):
    u = np.asarray(u, dtype=np.float64)
    trials, n, _ = u.shape
    wrong = u[:, :, 0] < q
    passes = wrong == (u[:, :, 1] < qd)
    reach = u[:, :, 2] < a
    clear = u[:, :, 3] < b
    counts = np.zeros((5, n), dtype=np.int64)

    cond_cov = passes & reach & clear
    counts[3] = cond_cov.sum(axis=0)
    counts[4] = (cond_cov & wrong).sum(axis=0)

    stops_defer = ~passes | ~reach
    stops_cover = ~stops_defer & clear
    stop_any = stops_defer | stops_cover
    stop_any[:, -1] = True
    t = stop_any.argmax(axis=1)
    rows = np.arange(trials)
    covered = stops_cover[rows, t]
    counts[0] = np.bincount(t[covered], minlength=n)
    counts[1] = np.bincount(t[covered & wrong[rows, t]], minlength=n)
    counts[2] = np.bincount(t[~covered], minlength=n)
    return counts
