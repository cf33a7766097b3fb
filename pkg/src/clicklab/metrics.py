"""Histograms and scalar figures of merit for single-detector click streams."""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .simkit import photon_energy
from .timetag import ChannelStream

__all__ = [
    "Histogram", "Measured", "AfterpulseEstimate", "EfficiencyInput", "afterpulse_probability",
    "afterpulse_excess", "afterpulse_window", "inter_event_histogram", "choose_blocking_time",
    "photon_energy", "detector_efficiency", "nep", "sync_histogram", "suggest_offset", "count_rate",
    "MU_REL_ERR",
]

MU_REL_ERR = 0.4 / 4.7

_HIST_HEADER = re.compile(r"^#clicklab-hist v1 bin_width_ps=(\d+) origin_ps=(-?\d+)\s*$")


class Measured(NamedTuple):
    value: float
    error: float


@dataclass
class Histogram:
    bin_width_ps: int
    origin_ps: int
    counts: np.ndarray
    total_in: int
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_ps <= 0:
            raise ValueError("bin width must be positive")
        if int(self.counts.sum()) + self.underflow + self.overflow != self.total_in:
            raise ValueError("histogram does not conserve its entries")

    def __len__(self):
        return len(self.counts)

    @property
    def edges(self) -> np.ndarray:
        return self.origin_ps + self.bin_width_ps * np.arange(len(self.counts) + 1, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.origin_ps + self.bin_width_ps * (np.arange(len(self.counts)) + 0.5)

    def bin_of(self, delay_ps) -> int:
        return int((delay_ps - self.origin_ps) // self.bin_width_ps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"#clicklab-hist v1 bin_width_ps={self.bin_width_ps} origin_ps={self.origin_ps}\n")
        buf.write(f"#total_in={self.total_in} underflow={self.underflow} overflow={self.overflow}\n")
        for i, c in enumerate(self.counts):
            buf.write(f"{i},{c}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        lines = text.splitlines()
        m = _HIST_HEADER.match(lines[0]) if lines else None
        if m is None:
            raise ValueError("malformed histogram header")
        extra = {}
        rows = []
        for line in lines[1:]:
            if line.startswith("#"):
                extra.update(kv.split("=", 1) for kv in line[1:].split() if "=" in kv)
            elif line.strip():
                i, c = line.split(",")
                rows.append((int(i), int(c)))
        counts = np.zeros(max((i for i, _ in rows), default=-1) + 1, np.int64)
        for i, c in rows:
            counts[i] = c
        under, over = int(extra.get("underflow", 0)), int(extra.get("overflow", 0))
        total = int(extra.get("total_in", counts.sum() + under + over))
        return cls(int(m.group(1)), int(m.group(2)), counts, total, under, over)


# ---------------------------------------------------------------------------
# afterpulsing


@dataclass(frozen=True)
class AfterpulseEstimate:
    probability: float
    error: float
    n_near: int
    n_total: int
    window_ps: int


def _near_count(t: np.ndarray, window_ps: int) -> int:
    if len(t) < 2:
        return 0
    return int(np.count_nonzero(np.diff(t) <= window_ps))


def afterpulse_probability(stream: ChannelStream, window_ps: int) -> AfterpulseEstimate:
    """Fraction of tags that have a predecessor no more than ``window_ps`` earlier.

    The error is the binomial standard error ``sqrt(p (1 - p) / N)``.
    """
    if window_ps <= 0:
        raise ValueError("window must be positive")
    n = len(stream)
    if n == 0:
        raise ValueError("afterpulse probability of an empty stream")
    near = _near_count(stream.tags, window_ps)
    p = near / n
    return AfterpulseEstimate(p, math.sqrt(p * (1 - p) / n), near, n, int(window_ps))


def afterpulse_excess(stream: ChannelStream, window_ps: int, iterations: int = 50) -> AfterpulseEstimate:
    """Afterpulse fraction with accidental neighbours removed.

    A tag that is not an afterpulse still finds a predecessor inside the window
    with probability ``a = 1 - exp(-R_primary * W)``. Solving
    ``p = f + (1 - f) a`` with ``R_primary = (1 - f) N / T`` for the
    afterpulse fraction ``f`` gives an estimate free of the Poisson floor.
    Slightly negative values are possible for post-selected streams.
    """
    raw = afterpulse_probability(stream, window_ps)
    T = stream.duration * 1e-12
    W = window_ps * 1e-12
    f = raw.probability
    a = 0.0
    for _ in range(iterations):
        a = 1 - math.exp(-max(1 - f, 0.0) * raw.n_total / T * W)
        f_new = (raw.probability - a) / (1 - a)
        if abs(f_new - f) < 1e-12:
            f = f_new
            break
        f = f_new
    return AfterpulseEstimate(f, raw.error / (1 - a), raw.n_near, raw.n_total, int(window_ps))


def afterpulse_window(rate_Hz: float) -> int:
    """Afterpulse search window: 10 % of the inverse rate, in ps."""
    if rate_Hz <= 0:
        raise ValueError("rate must be positive")
    return int(round(0.1 / rate_Hz * 1e12))


def inter_event_histogram(stream: ChannelStream, bin_width_ps: int, max_delay_ps: int,
                          rule: str = "all") -> Histogram:
    """Delays from each tag to later tags, up to ``max_delay_ps``.

    ``rule="all"`` bins every later tag within range, ``rule="next"`` only the
    immediate successor; in that mode successors beyond range are overflow.
    """
    nbins = max(1, -(-int(max_delay_ps) // int(bin_width_ps)))
    t = stream.tags
    if rule == "all":
        counts, total, over = _kernels.forward_delay_histogram(t, np.int64(max_delay_ps), np.int64(bin_width_ps),
                                                               nbins)
        return Histogram(int(bin_width_ps), 0, counts, int(total), 0, int(over))
    if rule == "next":
        d = np.diff(t)
        k = d // bin_width_ps
        inside = (d <= max_delay_ps) & (k < nbins)
        counts = np.bincount(k[inside], minlength=nbins)
        return Histogram(int(bin_width_ps), 0, counts, len(d), 0, int(len(d) - inside.sum()))
    raise ValueError(f"unknown pairing rule {rule!r}")


def choose_blocking_time(h: Histogram, residual_target: float = 0.1, tail_fraction: float = 0.2,
                         min_significance: float = 3.0) -> int:
    """Shortest block that leaves at most ``residual_target`` of the afterpulse excess.

    A flat background is taken as the mean of the last ``tail_fraction`` of
    the bins. If the total excess is below ``min_significance`` standard
    deviations the histogram is treated as pure background and 0 is returned.
    """
    if len(h.counts) == 0 or h.total_in == 0:
        raise ValueError("empty histogram")
    c = h.counts.astype(float)
    n = len(c)
    n_tail = max(1, int(math.ceil(tail_fraction * n)))
    n_head = n - n_tail
    if n_head <= 0:
        return 0
    bg = c[-n_tail:].mean()
    cum = np.cumsum(c - bg)
    total = cum[-1]
    sigma = math.sqrt(c[:n_head].sum() + (n_head / n_tail) ** 2 * c[-n_tail:].sum())
    if total <= 0 or total < min_significance * sigma:
        return 0
    idx = int(np.argmax(cum >= (1 - residual_target) * total))
    return int(h.origin_ps + (idx + 1) * h.bin_width_ps)


# ---------------------------------------------------------------------------
# efficiency and NEP


@dataclass(frozen=True)
class EfficiencyInput:
    R_det_Hz: float
    D_Hz: float
    tau_ps: float
    P_W: float
    mu: float = 4.7e-12
    lambda_nm: float = 1560.0
    R_det_err_Hz: float = 0.0
    D_err_Hz: float = 0.0
    mu_rel_err: float = MU_REL_ERR

    def __post_init__(self):
        if self.R_det_Hz < 0 or self.D_Hz < 0:
            raise ValueError("rates must be non-negative")
        if self.P_W <= 0 or self.mu <= 0:
            raise ValueError("power and attenuation must be positive")
        tau = self.tau_ps * 1e-12
        if self.R_det_Hz * tau >= 1 or self.D_Hz * tau >= 1:
            raise ValueError("dead-time correction diverges (rate * tau >= 1)")


def count_rate(stream: ChannelStream) -> Measured:
    """Counts over the full window, with Poisson error."""
    T = stream.duration * 1e-12
    n = len(stream)
    return Measured(n / T, math.sqrt(n) / T)


def detector_efficiency(inp: EfficiencyInput) -> Measured:
    """Detection efficiency from CW click and dark rates with non-paralyzable correction.

    ``R / (1 - R tau)`` equals counts over live time ``T - N tau``, so the rates
    passed in must be plain counts over the full window.
    """
    tau = inp.tau_ps * 1e-12
    k = photon_energy(inp.lambda_nm) / (inp.P_W * inp.mu)
    r, d = inp.R_det_Hz, inp.D_Hz
    eta = k * (r / (1 - r * tau) - d / (1 - d * tau))
    d_r = k / (1 - r * tau) ** 2
    d_d = k / (1 - d * tau) ** 2
    err = math.sqrt((d_r * inp.R_det_err_Hz) ** 2 + (d_d * inp.D_err_Hz) ** 2 + (eta * inp.mu_rel_err) ** 2)
    return Measured(eta, err)


def nep(eta: float, D_Hz: float, lambda_nm: float) -> float:
    """Noise-equivalent power in W/sqrt(Hz)."""
    if eta <= 0:
        raise ValueError("NEP needs a positive efficiency")
    if D_Hz < 0:
        raise ValueError("dark rate must be non-negative")
    return photon_energy(lambda_nm) / eta * math.sqrt(2 * D_Hz)


# ---------------------------------------------------------------------------
# sync-referenced histograms


def sync_delays(stream: ChannelStream, sync: ChannelStream) -> tuple[np.ndarray, int]:
    """Delay of every tag after its most recent sync; also the number of tags before the first sync."""
    if len(sync) == 0:
        raise ValueError("empty sync stream")
    idx = np.searchsorted(sync.tags, stream.tags, side="right") - 1
    before = int(np.count_nonzero(idx < 0))
    ok = idx >= 0
    return stream.tags[ok] - sync.tags[idx[ok]], before


def sync_histogram(stream: ChannelStream, sync: ChannelStream, bin_width_ps: int,
                   range_ps: int | None = None, period_ps: float | None = None) -> Histogram:
    """Histogram of ``t - s`` for the most recent sync ``s``; tags before the first sync are underflow.

    With ``period_ps`` the delays are folded into ``[0, period_ps)`` first,
    which stacks all pulses of a divided sync into one peak.
    """
    d, before = sync_delays(stream, sync)
    if period_ps:
        d = np.floor(np.mod(d, period_ps)).astype(np.int64)
        range_ps = int(math.ceil(period_ps))
    elif range_ps is None:
        s = sync.tags
        range_ps = int(np.diff(s).max()) if len(s) > 1 else int(sync.duration - s[0]) + 1
    nbins = max(1, -(-int(range_ps) // int(bin_width_ps)))
    k = d // bin_width_ps
    inside = k < nbins
    counts = np.bincount(k[inside], minlength=nbins)
    return Histogram(int(bin_width_ps), 0, counts, len(stream), before, int(len(d) - inside.sum()))


def suggest_offset(h: Histogram, period_ps: float | None = None) -> int:
    """Center of the fullest bin, folded into ``[0, period_ps)`` when a period is given."""
    if h.counts.sum() == 0:
        raise ValueError("cannot locate a peak in an empty histogram")
    center = h.origin_ps + (int(np.argmax(h.counts)) + 0.5) * h.bin_width_ps
    if period_ps:
        center = center % period_ps
    return int(round(center))
