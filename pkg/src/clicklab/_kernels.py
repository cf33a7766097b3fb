"""Compiled single-pass loops over sorted int64 timestamp arrays."""

import numpy as np
from numba import njit

KIND_PHOTON = 0
KIND_DARK = 1
KIND_AFTERPULSE = 2


# ---------------------------------------------------------------------------
# detector walk


@njit(cache=True)
def _heap_push(ht, hd, n, t, d):
    i = n
    ht[i] = t
    hd[i] = d
    while i > 0:
        p = (i - 1) >> 1
        if ht[p] <= ht[i]:
            break
        ht[p], ht[i] = ht[i], ht[p]
        hd[p], hd[i] = hd[i], hd[p]
        i = p
    return n + 1


@njit(cache=True)
def _heap_pop(ht, hd, n):
    n -= 1
    ht[0] = ht[n]
    hd[0] = hd[n]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < n and ht[l] < ht[m]:
            m = l
        if r < n and ht[r] < ht[m]:
            m = r
        if m == i:
            break
        ht[m], ht[i] = ht[i], ht[m]
        hd[m], hd[i] = hd[i], hd[m]
        i = m
    return n


@njit(cache=True)
def detector_walk(cand, cand_kind, dead_ps, p_ap, t0_ps, tau_ps, max_depth, end_ps, u, e):
    """Non-paralyzable dead time with cascading afterpulses.

    ``u`` and ``e`` hold one uniform and one unit-exponential draw per
    accepted click. Returns ``(times, kinds, n_used)``; ``n_used`` is -1 if
    the random buffers ran out.
    """
    n = cand.shape[0]
    cap = n + u.shape[0]
    out_t = np.empty(cap, np.int64)
    out_k = np.empty(cap, np.int8)
    ht = np.empty(u.shape[0] + 1, np.int64)
    hd = np.empty(u.shape[0] + 1, np.int64)
    nh = 0
    i = 0
    k = 0
    n_out = 0
    have_last = False
    last = 0
    while i < n or nh > 0:
        if nh > 0 and (i >= n or ht[0] < cand[i]):
            t = ht[0]
            depth = hd[0]
            kind = KIND_AFTERPULSE
            nh = _heap_pop(ht, hd, nh)
        else:
            t = cand[i]
            depth = 0
            kind = cand_kind[i]
            i += 1
        if have_last and t - last < dead_ps:
            continue
        have_last = True
        last = t
        out_t[n_out] = t
        out_k[n_out] = kind
        n_out += 1
        if p_ap > 0.0:
            if k >= u.shape[0]:
                return out_t[:0], out_k[:0], -1
            if u[k] < p_ap and depth < max_depth:
                ta = t + t0_ps + np.int64(np.floor(tau_ps * e[k]))
                if ta < end_ps:
                    nh = _heap_push(ht, hd, nh, ta, depth + 1)
            k += 1
    return out_t[:n_out], out_k[:n_out], k


# ---------------------------------------------------------------------------
# filters


@njit(cache=True)
def _blocking_scan(t, block, out, write):
    n_keep = 0
    have_prev = False
    prev = 0
    for i in range(t.shape[0]):
        ti = t[i]
        if i > 0 and t[i - 1] < ti:
            have_prev = True
            prev = t[i - 1]
        if not have_prev or ti - prev >= block:
            if write:
                out[n_keep] = ti
            n_keep += 1
    return n_keep


@njit(cache=True)
def blocking_filter(t, block):
    n = _blocking_scan(t, block, t[:0].copy(), False)
    out = np.empty(n, np.int64)
    _blocking_scan(t, block, out, True)
    return out


@njit(cache=True)
def _gate_scan(t, sync, offset, width, period, out, write):
    m = sync.shape[0]
    j = -1
    n_keep = 0
    half = width / 2.0
    for i in range(t.shape[0]):
        ti = t[i]
        while j + 1 < m and sync[j + 1] <= ti:
            j += 1
        if j < 0:
            continue
        d = ti - sync[j] - offset
        if period > 0.0:
            df = d - period * np.floor(d / period + 0.5)
            inside = abs(df) <= half
        else:
            inside = 2 * abs(d) <= width
        if inside:
            if write:
                out[n_keep] = ti
            n_keep += 1
    return n_keep


@njit(cache=True)
def time_gate(t, sync, offset, width, period):
    n = _gate_scan(t, sync, offset, width, period, t[:0].copy(), False)
    out = np.empty(n, np.int64)
    _gate_scan(t, sync, offset, width, period, out, True)
    return out


# ---------------------------------------------------------------------------
# coincidences and histograms


@njit(cache=True)
def greedy_coincidences(a, b, offset, window, record):
    """Earliest-first matching of a[i] with b[j] where 2|b[j] - offset - a[i]| <= window."""
    na = a.shape[0]
    nb = b.shape[0]
    cap = min(na, nb) if record else 0
    ia = np.empty(cap, np.int64)
    ib = np.empty(cap, np.int64)
    i = 0
    j = 0
    count = 0
    while i < na and j < nb:
        d2 = 2 * (b[j] - offset - a[i])
        if d2 < -window:
            j += 1
        elif d2 > window:
            i += 1
        else:
            if record:
                ia[count] = i
                ib[count] = j
            count += 1
            i += 1
            j += 1
    return count, ia[:count], ib[:count]


@njit(cache=True)
def pair_delay_histogram(a, b, lo, hi, origin, width, nbins):
    """Histogram of b[j] - a[i] over all pairs with lo <= delay <= hi.

    Returns (counts, n_entries, underflow, overflow).
    """
    counts = np.zeros(nbins, np.int64)
    nb = b.shape[0]
    j0 = 0
    total = 0
    under = 0
    over = 0
    for i in range(a.shape[0]):
        ai = a[i]
        while j0 < nb and b[j0] - ai < lo:
            j0 += 1
        j = j0
        while j < nb and b[j] - ai <= hi:
            d = b[j] - ai
            total += 1
            k = (d - origin) // width
            if k < 0:
                under += 1
            elif k >= nbins:
                over += 1
            else:
                counts[k] += 1
            j += 1
    return counts, total, under, over


@njit(cache=True)
def forward_delay_histogram(t, max_delay, width, nbins):
    """Histogram of delays from each tag to every later tag (by index) within max_delay."""
    counts = np.zeros(nbins, np.int64)
    n = t.shape[0]
    total = 0
    over = 0
    for i in range(n):
        j = i + 1
        while j < n and t[j] - t[i] <= max_delay:
            k = (t[j] - t[i]) // width
            total += 1
            if k >= nbins:
                over += 1
            else:
                counts[k] += 1
            j += 1
    return counts, total, over
