"""Quadratic brute-force references for the streaming kernels.

These follow the definitions directly and share no code with the package.
They are jitted only so the 1000-stream comparisons finish in seconds.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def blocking_oracle(t, block):
    keep = np.zeros(t.shape[0], np.bool_)
    for i in range(t.shape[0]):
        ok = True
        for j in range(t.shape[0]):
            if t[i] - block < t[j] and t[j] < t[i]:
                ok = False
                break
        keep[i] = ok
    return t[keep]


@njit(cache=True)
def gate_oracle(t, sync, offset, width, period):
    keep = np.zeros(t.shape[0], np.bool_)
    for i in range(t.shape[0]):
        latest = -1
        for j in range(sync.shape[0]):
            if sync[j] <= t[i] and (latest < 0 or sync[j] > sync[latest]):
                latest = j
        if latest < 0:
            continue
        d = t[i] - sync[latest] - offset
        if period > 0.0:
            k0 = np.floor(d / period)
            for k in (k0 - 1.0, k0, k0 + 1.0, k0 + 2.0):
                if abs(d - k * period) <= width / 2.0:
                    keep[i] = True
        else:
            keep[i] = abs(d) * 2 <= width
    return t[keep]


@njit(cache=True)
def coincidence_oracle(a, b, offset, window):
    """Take a-tags in time order; each grabs the earliest unused compatible b-tag."""
    used = np.zeros(b.shape[0], np.bool_)
    count = 0
    for i in range(a.shape[0]):
        best = -1
        for j in range(b.shape[0]):
            if used[j]:
                continue
            if abs(b[j] - offset - a[i]) * 2 <= window:
                if best < 0 or b[j] < b[best]:
                    best = j
        if best >= 0:
            used[best] = True
            count += 1
    return count


def pair_delays(a, b, range_ps):
    d = (b[None, :] - a[:, None]).ravel()
    return d[np.abs(d) <= range_ps]
