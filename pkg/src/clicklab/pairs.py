"""Two-channel coincidence analysis: correlation histograms, matching, CAR, Klyshko."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .metrics import Histogram, Measured
from .timetag import ChannelStream


def _check_pair(a: ChannelStream, b: ChannelStream):
    if a.duration != b.duration:
        raise ValueError(f"streams have different durations: {a.duration} vs {b.duration}")


def cross_correlation_histogram(a: ChannelStream, b: ChannelStream, bin_width_ps: int,
                                range_ps: int) -> Histogram:
    """Histogram of ``t_b - t_a`` over all pairs with ``|t_b - t_a| <= range_ps``.

    Bins are centred: the bin holding zero delay spans ``[-w//2, w - w//2)``.
    The range is widened to whole bins so the outermost bins are not
    half-empty.
    """
    _check_pair(a, b)
    w = int(bin_width_ps)
    nhalf = -(-int(range_ps) // w)
    origin = -nhalf * w - w // 2
    nbins = 2 * nhalf + 1
    counts, total, under, over = _kernels.pair_delay_histogram(
        a.tags, b.tags, np.int64(origin), np.int64(origin + nbins * w - 1), np.int64(origin), np.int64(w), nbins)
    return Histogram(w, origin, counts, int(total), int(under), int(over))


def peak_offset(h: Histogram) -> int:
    """Delay at the centre of the fullest bin."""
    if h.counts.sum() == 0:
        raise ValueError("empty correlation histogram")
    return int(h.origin_ps + int(np.argmax(h.counts)) * h.bin_width_ps + h.bin_width_ps // 2)


@dataclass
class CoincidenceResult:
    count: int
    rate_Hz: float
    rate_err_Hz: float
    offset_ps: int
    window_ps: int
    pairs: tuple | None = field(default=None, repr=False)

    @property
    def rate(self) -> Measured:
        return Measured(self.rate_Hz, self.rate_err_Hz)

    def to_dict(self):
        return {"count": self.count, "rate_Hz": self.rate_Hz, "rate_err_Hz": self.rate_err_Hz,
                "offset_ps": self.offset_ps, "window_ps": self.window_ps}


def count_coincidences(a: ChannelStream, b: ChannelStream, offset_ps: int, window_ps: int,
                       record_pairs: bool = False) -> CoincidenceResult:
    """Greedy earliest-first matching with no tag reuse.

    ``(i, j)`` is compatible iff ``|t_b[j] - t_a[i] - offset_ps| <= window_ps / 2``.
    """
    _check_pair(a, b)
    if window_ps <= 0:
        raise ValueError("coincidence window must be positive")
    n, ia, ib = _kernels.greedy_coincidences(a.tags, b.tags, np.int64(offset_ps), np.int64(window_ps),
                                             record_pairs)
    T = a.duration * 1e-12
    return CoincidenceResult(int(n), n / T, math.sqrt(n) / T, int(offset_ps), int(window_ps),
                             (ia, ib) if record_pairs else None)


def count_pairs_in_window(a: ChannelStream, b: ChannelStream, offset_ps: int, window_ps: int) -> CoincidenceResult:
    """Every pair inside the window, with tag reuse; what a correlation histogram integrates."""
    _check_pair(a, b)
    half = int(window_ps) // 2
    lo, hi = int(offset_ps) - half, int(offset_ps) + half
    _, total, _, _ = _kernels.pair_delay_histogram(a.tags, b.tags, np.int64(lo), np.int64(hi), np.int64(lo),
                                                   np.int64(hi - lo + 1), 1)
    T = a.duration * 1e-12
    return CoincidenceResult(int(total), total / T, math.sqrt(total) / T, int(offset_ps), int(window_ps))


def accidental_rate(R_a_Hz: float, R_b_Hz: float, rep_rate_Hz: float) -> float:
    """Accidental coincidences of a pulsed source: per-pulse click probabilities times pulse rate."""
    if R_a_Hz < 0 or R_b_Hz < 0:
        raise ValueError("rates must be non-negative")
    if rep_rate_Hz <= 0:
        raise ValueError("repetition rate must be positive")
    return R_a_Hz * R_b_Hz / rep_rate_Hz


def accidental_rate_cw(R_a_Hz: float, R_b_Hz: float, window_ps: float) -> float:
    """Accidental coincidences of two independent CW streams inside a window."""
    return R_a_Hz * R_b_Hz * window_ps * 1e-12


def accidental_measured(R_a: Measured, R_b: Measured, rep_rate_Hz: float) -> Measured:
    A = accidental_rate(R_a.value, R_b.value, rep_rate_Hz)
    rel = math.hypot(_rel(R_a), _rel(R_b))
    return Measured(A, A * rel)


def _rel(m: Measured) -> float:
    return m.error / m.value if m.value else 0.0


def car(C_rate_Hz: float, A_rate_Hz: float, C_err_Hz: float = 0.0, A_err_Hz: float = 0.0) -> Measured:
    if A_rate_Hz <= 0:
        raise ValueError("CAR needs a positive accidental rate")
    r = C_rate_Hz / A_rate_Hz
    return Measured(r, math.hypot(C_err_Hz / A_rate_Hz, r * A_err_Hz / A_rate_Hz))


@dataclass(frozen=True)
class KlyshkoResult:
    eta_signal: Measured
    eta_idler: Measured

    def to_dict(self):
        return {"eta_signal": self.eta_signal.value, "eta_signal_err": self.eta_signal.error,
                "eta_idler": self.eta_idler.value, "eta_idler_err": self.eta_idler.error}


def klyshko(C_rate: float, A_rate: float, N_signal_rate: float, N_idler_rate: float,
            C_err: float = 0.0, A_err: float = 0.0, N_signal_err: float = 0.0,
            N_idler_err: float = 0.0) -> KlyshkoResult:
    """Heralding efficiencies ``(C - A) / N_other`` with statistical errors only."""
    if N_signal_rate <= 0 or N_idler_rate <= 0:
        raise ValueError("single rates must be positive")
    if C_rate < 0 or A_rate < 0:
        raise ValueError("rates must be non-negative")
    net = C_rate - A_rate
    net_err = math.hypot(C_err, A_err)

    def eta(n, n_err):
        v = net / n
        return Measured(v, math.hypot(net_err / n, v * n_err / n))

    return KlyshkoResult(eta(N_idler_rate, N_idler_err), eta(N_signal_rate, N_signal_err))
