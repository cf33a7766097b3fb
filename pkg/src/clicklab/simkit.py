"""Stochastic light sources and free-running NFAD click simulation.

All simulators are pure functions of their arguments and an integer seed.
Output timestamps are integer picoseconds in ``[0, duration_ps]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c, h

from . import _kernels
from .configfile import ConfigDoc, ConfigError, load_config, resolve_config
from .timetag import ChannelStream

PS = 1e-12

KIND_PHOTON = _kernels.KIND_PHOTON
KIND_DARK = _kernels.KIND_DARK
KIND_AFTERPULSE = _kernels.KIND_AFTERPULSE

SYNC_CHANNEL = 0
SIGNAL_CHANNEL = 1
IDLER_CHANNEL = 2


class ModelRangeError(ValueError):
    """A temperature, wavelength or bias outside the model tables."""


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _spawn(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def photon_energy(lambda_nm: float) -> float:
    """Photon energy hc/lambda in joule."""
    if lambda_nm <= 0:
        raise ValueError("wavelength must be positive")
    return h * c / (lambda_nm * 1e-9)


# ---------------------------------------------------------------------------
# models


def _bracket(xs, x, what):
    """Indices and weight for linear interpolation of x in sorted xs; no extrapolation."""
    xs = np.asarray(xs, dtype=float)
    if len(xs) == 0:
        raise ModelRangeError(f"empty {what} table")
    if x < xs[0] - 1e-9 or x > xs[-1] + 1e-9:
        raise ModelRangeError(f"{what} {x} outside table range [{xs[0]}, {xs[-1]}]")
    if len(xs) == 1:
        return 0, 0, 0.0
    k = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2))
    w = (x - xs[k]) / (xs[k + 1] - xs[k])
    return k, k + 1, float(min(max(w, 0.0), 1.0))


@dataclass(frozen=True)
class DetectorModel:
    """Behavioural NFAD model.

    ``dark_rate_table`` rows are ``(temperature_C, bias_label, rate_Hz)``;
    bias labels are ordered by first appearance. ``afterpulse_table`` rows are
    ``(temperature_C, p_ap, tau_ps)``. ``rel_sensitivity_table`` rows are
    ``(temperature_C, wavelength_nm, relative_sensitivity)`` and must equal 1
    at ``sensitivity_reference_C``; an empty table means flat response.
    """

    dark_rate_table: tuple = ()
    efficiency_eta0: float = 0.1
    rel_sensitivity_table: tuple = ()
    dead_time_ps: int = 0
    afterpulse_table: tuple = ()
    afterpulse_t0_ps: int = 30_000
    jitter_sigma_ps: float = 0.0
    bias_efficiency: dict = field(default_factory=dict)
    max_cascade_depth: int = 16
    sensitivity_reference_C: float = -60.0
    name: str = "detector"

    def __post_init__(self):
        if not 0 <= self.efficiency_eta0 <= 1:
            raise ValueError("efficiency_eta0 must lie in [0, 1]")
        if self.dead_time_ps < 0:
            raise ValueError("dead time must be non-negative")
        if self.jitter_sigma_ps < 0:
            raise ValueError("jitter must be non-negative")
        for row in self.dark_rate_table:
            if row[2] < 0:
                raise ValueError(f"negative dark rate in {row}")
        for row in self.afterpulse_table:
            if not 0 <= row[1] < 1:
                raise ValueError(f"afterpulse probability must be in [0, 1): {row}")
            if row[2] <= 0:
                raise ValueError(f"afterpulse tau must be positive: {row}")
        for row in self.rel_sensitivity_table:
            if row[2] < 0:
                raise ValueError(f"negative sensitivity in {row}")
            if abs(row[0] - self.sensitivity_reference_C) < 1e-9 and abs(row[2] - 1) > 1e-9:
                raise ValueError(f"relative sensitivity at the reference temperature must be 1: {row}")
        for factor in self.bias_efficiency.values():
            if factor < 0 or factor * self.efficiency_eta0 > 1:
                raise ValueError("bias efficiency factor gives efficiency outside [0, 1]")

    @property
    def bias_labels(self) -> list[str]:
        seen = []
        for _, b, _ in self.dark_rate_table:
            if b not in seen:
                seen.append(b)
        return seen

    def dark_rate(self, temperature_C: float, bias: str | None = None) -> float:
        """Dark rate, interpolated linearly in log(rate) between table temperatures."""
        if not self.dark_rate_table:
            return 0.0
        if bias is None:
            labels = self.bias_labels
            if len(labels) != 1:
                raise ModelRangeError(f"bias label required, one of {labels}")
            bias = labels[0]
        rows = sorted((T, r) for T, b, r in self.dark_rate_table if b == bias)
        if not rows:
            raise ModelRangeError(f"unknown bias label {bias!r}; known {self.bias_labels}")
        temps = [T for T, _ in rows]
        i, j, w = _bracket(temps, temperature_C, "temperature")
        r0, r1 = rows[i][1], rows[j][1]
        if r0 <= 0 or r1 <= 0:
            return (1 - w) * r0 + w * r1
        return math.exp((1 - w) * math.log(r0) + w * math.log(r1))

    def rel_sensitivity(self, temperature_C: float, wavelength_nm: float) -> float:
        if not self.rel_sensitivity_table:
            return 1.0
        temps = sorted({r[0] for r in self.rel_sensitivity_table})
        i, j, w = _bracket(temps, temperature_C, "temperature")

        def at(T):
            pts = sorted((lam, s) for t, lam, s in self.rel_sensitivity_table if t == T)
            lams = [p[0] for p in pts]
            a, b, v = _bracket(lams, wavelength_nm, "wavelength")
            return (1 - v) * pts[a][1] + v * pts[b][1]

        return (1 - w) * at(temps[i]) + w * at(temps[j])

    def efficiency(self, temperature_C: float, wavelength_nm: float, bias: str | None = None) -> float:
        factor = self.bias_efficiency.get(bias, 1.0) if bias is not None else 1.0
        return self.efficiency_eta0 * factor * self.rel_sensitivity(temperature_C, wavelength_nm)

    def _afterpulse_params(self, temperature_C):
        if not self.afterpulse_table:
            return 0.0, 1.0
        rows = sorted(self.afterpulse_table)
        i, j, w = _bracket([r[0] for r in rows], temperature_C, "temperature")
        p = (1 - w) * rows[i][1] + w * rows[j][1]
        tau = (1 - w) * rows[i][2] + w * rows[j][2]
        return p, tau

    def afterpulse_prob(self, temperature_C: float) -> float:
        return self._afterpulse_params(temperature_C)[0]

    def afterpulse_tau_ps(self, temperature_C: float) -> float:
        return self._afterpulse_params(temperature_C)[1]

    @classmethod
    def from_config(cls, doc: ConfigDoc) -> "DetectorModel":
        ns = 1000.0
        tau_default = doc.get("afterpulse_tau_ns", 1000.0, float)
        kw = dict(
            name=doc.get("name", "detector"),
            efficiency_eta0=doc.require("efficiency_eta0", float),
            dead_time_ps=int(round(doc.get("dead_time_ns", 0.0, float) * ns)),
            afterpulse_t0_ps=int(round(doc.get("afterpulse_t0_ns", 30.0, float) * ns)),
            jitter_sigma_ps=doc.get("jitter_sigma_ps", 0.0, float),
            max_cascade_depth=doc.get("max_cascade_depth", 16, int),
            sensitivity_reference_C=doc.get("sensitivity_reference_C", -60.0, float),
        )
        t = doc.tables
        try:
            if "dark_rate_table" in t:
                tab = t["dark_rate_table"]
                kw["dark_rate_table"] = tuple(zip(tab.column("temperature_C", float), tab.column("bias"),
                                                  tab.column("rate_Hz", float)))
            if "afterpulse_table" in t:
                tab = t["afterpulse_table"]
                taus = (tab.column("tau_ns", float) if "tau_ns" in tab.columns
                        else [tau_default] * len(tab.rows))
                kw["afterpulse_table"] = tuple(zip(tab.column("temperature_C", float), tab.column("p_ap", float),
                                                   [x * ns for x in taus]))
            elif "afterpulse_prob" in doc.values:
                kw["afterpulse_table"] = ((0.0, doc.get("afterpulse_prob", conv=float), tau_default * ns),)
            if "rel_sensitivity_table" in t:
                tab = t["rel_sensitivity_table"]
                kw["rel_sensitivity_table"] = tuple(zip(tab.column("temperature_C", float),
                                                        tab.column("wavelength_nm", float),
                                                        tab.column("rel_sensitivity", float)))
            if "bias_efficiency_table" in t:
                tab = t["bias_efficiency_table"]
                kw["bias_efficiency"] = dict(zip(tab.column("bias"), tab.column("factor", float)))
            return cls(**kw)
        except ValueError as e:
            raise ConfigError(f"{doc.source}: {e}") from None

    @classmethod
    def load(cls, ref, relative_to=None) -> "DetectorModel":
        return cls.from_config(load_config(resolve_config(ref, relative_to)))

    def replace(self, **changes) -> "DetectorModel":
        from dataclasses import replace
        return replace(self, **changes)


def simple_detector(eta=1.0, dark_rate_Hz=0.0, dead_time_ps=0, p_ap=0.0, tau_ps=1_000_000.0,
                    t0_ps=30_000, jitter_sigma_ps=0.0, max_cascade_depth=16) -> DetectorModel:
    """Temperature-independent detector; valid at any temperature and wavelength."""
    big = 1e6
    return DetectorModel(
        dark_rate_table=((-big, "default", dark_rate_Hz), (big, "default", dark_rate_Hz)),
        efficiency_eta0=eta,
        dead_time_ps=int(dead_time_ps),
        afterpulse_table=((-big, p_ap, tau_ps), (big, p_ap, tau_ps)),
        afterpulse_t0_ps=int(t0_ps),
        jitter_sigma_ps=jitter_sigma_ps,
        max_cascade_depth=max_cascade_depth,
        name="simple",
    )


@dataclass(frozen=True)
class CwSourceModel:
    power_W: float
    wavelength_nm: float = 1560.0
    attenuation_mu: float = 4.7e-12

    def __post_init__(self):
        if self.power_W <= 0:
            raise ValueError("power must be positive")
        if not 0 < self.attenuation_mu <= 1:
            raise ValueError("attenuation must lie in (0, 1]")

    @property
    def photon_rate(self) -> float:
        """Mean photon flux in Hz at the detector."""
        return self.power_W * self.attenuation_mu / photon_energy(self.wavelength_nm)


@dataclass(frozen=True)
class PdcSourceModel:
    rep_rate_Hz: float = 76e6
    sync_divider: int = 128
    mean_pairs_per_pulse: float = 1e-3
    path_eta_signal: float = 1.0
    path_eta_idler: float = 1.0
    pair_time_spread_ps: float = 0.0
    signal_delay_ps: int = 0
    idler_delay_ps: int = 0
    wavelength_nm: float = 1578.0

    def __post_init__(self):
        if self.rep_rate_Hz <= 0:
            raise ValueError("repetition rate must be positive")
        if self.sync_divider < 1:
            raise ValueError("sync divider must be >= 1")
        if self.mean_pairs_per_pulse < 0:
            raise ValueError("mean pairs per pulse must be >= 0")
        for eta in (self.path_eta_signal, self.path_eta_idler):
            if not 0 <= eta <= 1:
                raise ValueError("path efficiencies must lie in [0, 1]")

    @property
    def pulse_period_ps(self) -> float:
        return 1e12 / self.rep_rate_Hz

    def pulse_time(self, k):
        return np.rint(np.asarray(k, dtype=np.float64) * self.pulse_period_ps).astype(np.int64)

    @classmethod
    def from_config(cls, doc: ConfigDoc) -> "PdcSourceModel":
        return cls(
            rep_rate_Hz=doc.get("rep_rate_Hz", 76e6, float),
            sync_divider=doc.get("sync_divider", 128, int),
            mean_pairs_per_pulse=doc.require("mean_pairs_per_pulse", float),
            path_eta_signal=doc.get("path_eta_signal", 1.0, float),
            path_eta_idler=doc.get("path_eta_idler", 1.0, float),
            pair_time_spread_ps=doc.get("pair_time_spread_ps", 0.0, float),
            signal_delay_ps=doc.get("signal_delay_ps", 0, int),
            idler_delay_ps=doc.get("idler_delay_ps", 0, int),
            wavelength_nm=doc.get("wavelength_nm", 1578.0, float),
        )


# ---------------------------------------------------------------------------
# simulators


def simulate_poisson_clicks(rate_Hz: float, duration_ps: int, seed, channel: int = 0) -> ChannelStream:
    """Homogeneous Poisson clicks built from exponential inter-arrival times."""
    if rate_Hz < 0:
        raise ValueError("rate must be non-negative")
    duration_ps = int(duration_ps)
    if rate_Hz == 0 or duration_ps == 0:
        return ChannelStream(channel, np.empty(0, np.int64), duration_ps)
    rng = _rng(seed)
    mean_gap = 1.0 / (rate_Hz * PS)
    expected = duration_ps / mean_gap
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    parts, start = [], 0.0
    while True:
        times = start + np.cumsum(rng.exponential(mean_gap, chunk))
        if times[-1] >= duration_ps:
            parts.append(times[times < duration_ps])
            break
        parts.append(times)
        start = times[-1]
        chunk = max(chunk // 4, 1024)
    tags = np.floor(np.concatenate(parts)).astype(np.int64)
    return ChannelStream(channel, tags, duration_ps)


def photon_arrivals_cw(src: CwSourceModel, duration_ps: int, seed, channel: int = 0) -> ChannelStream:
    return simulate_poisson_clicks(src.photon_rate, duration_ps, seed, channel)


def simulate_pdc(src: PdcSourceModel, duration_ps: int, seed):
    """Pulsed pair source.

    Returns ``(sync, signal_photons, idler_photons)`` on channels 0, 1, 2.
    Pulses occupy ``[0, duration_ps)``; pairs per pulse are Poisson, which is
    sampled as a Poisson total spread uniformly over pulses.
    """
    duration_ps = int(duration_ps)
    s_pairs, s_thin, s_spread = _spawn(seed, 3)
    n_pulses = int(math.ceil(duration_ps / src.pulse_period_ps))
    while n_pulses > 0 and src.pulse_time(n_pulses - 1) >= duration_ps:
        n_pulses -= 1
    sync_idx = np.arange(0, n_pulses, src.sync_divider, dtype=np.int64)
    sync = ChannelStream(SYNC_CHANNEL, src.pulse_time(sync_idx), duration_ps)

    rng = _rng(s_pairs)
    n_pairs = rng.poisson(src.mean_pairs_per_pulse * n_pulses) if n_pulses else 0
    pulses = np.sort(rng.integers(0, n_pulses, n_pairs)) if n_pairs else np.empty(0, np.int64)
    t_emit = src.pulse_time(pulses)
    if src.pair_time_spread_ps > 0 and n_pairs:
        t_emit = t_emit + np.rint(_rng(s_spread).normal(0.0, src.pair_time_spread_ps, n_pairs)).astype(np.int64)

    rng = _rng(s_thin)
    keep_s = rng.random(n_pairs) < src.path_eta_signal
    keep_i = rng.random(n_pairs) < src.path_eta_idler

    def arm(channel, keep, delay):
        t = np.sort(t_emit[keep] + delay)
        t = t[(t >= 0) & (t <= duration_ps)]
        return ChannelStream(channel, t, duration_ps)

    return (sync, arm(SIGNAL_CHANNEL, keep_s, src.signal_delay_ps),
            arm(IDLER_CHANNEL, keep_i, src.idler_delay_ps))


@dataclass
class Detection:
    """Detector output with ground-truth origin of every click."""

    stream: ChannelStream
    kinds: np.ndarray

    def count(self, kind) -> int:
        return int(np.count_nonzero(self.kinds == kind))


def detect_labeled(photons: ChannelStream, model: DetectorModel, temperature_C: float, wavelength_nm: float,
                   bias_label: str | None, duration_ps: int, seed) -> Detection:
    duration_ps = int(duration_ps)
    eta = model.efficiency(temperature_C, wavelength_nm, bias_label)
    dark = model.dark_rate(temperature_C, bias_label)
    p_ap, tau = model._afterpulse_params(temperature_C)
    s_thin, s_dark, s_walk, s_jit = _spawn(seed, 4)

    ph = photons.tags
    if eta < 1.0:
        ph = ph[_rng(s_thin).random(len(ph)) < eta]
    dk = simulate_poisson_clicks(dark, duration_ps, s_dark).tags
    cand = np.concatenate([ph, dk])
    kinds = np.concatenate([np.full(len(ph), KIND_PHOTON, np.int8), np.full(len(dk), KIND_DARK, np.int8)])
    order = np.argsort(cand, kind="stable")
    cand, kinds = cand[order], kinds[order]

    rng = _rng(s_walk)
    depth = model.max_cascade_depth
    n = len(cand)
    if p_ap > 0:
        guess = min(n * (depth + 1), int(n * 1.5 / (1 - p_ap)) + 1024)
        sizes = [guess, n * (depth + 1) + 1]
    else:
        sizes = [0]
    for size in sizes:
        u = rng.random(size)
        e = rng.standard_exponential(size)
        t, k, used = _kernels.detector_walk(cand, kinds, np.int64(model.dead_time_ps), float(p_ap),
                                            np.int64(model.afterpulse_t0_ps), float(tau), np.int64(depth),
                                            np.int64(duration_ps + 1), u, e)
        if used >= 0:
            break

    if model.jitter_sigma_ps > 0 and len(t):
        t = t + np.rint(_rng(s_jit).normal(0.0, model.jitter_sigma_ps, len(t))).astype(np.int64)
        order = np.argsort(t, kind="stable")
        t, k = np.clip(t[order], 0, duration_ps), k[order]
    return Detection(ChannelStream(photons.channel, t, duration_ps), k)


def detect(photons: ChannelStream, model: DetectorModel, temperature_C: float, wavelength_nm: float,
           bias_label: str | None, duration_ps: int, seed) -> ChannelStream:
    """Run photons through the detector: efficiency thinning, dark counts, dead time,
    afterpulse cascades and timing jitter, in that order."""
    return detect_labeled(photons, model, temperature_C, wavelength_nm, bias_label, duration_ps, seed).stream
